#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <queue>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "img2inchi/errors.hpp"
#include "img2inchi/rng.hpp"

namespace img2inchi {

// Small-organic alphabet with a fixed valence table; implicit hydrogens fill
// the remaining valence.
inline const std::vector<std::pair<std::string, int>>& atom_alphabet() {
    static const std::vector<std::pair<std::string, int>> table = {
        {"C", 4}, {"N", 3}, {"O", 2}, {"S", 2}, {"Cl", 1}};
    return table;
}

struct Bond {
    int a = 0, b = 0;
    int order = 1;  // 1 or 2
};

// Connected graph of at most 13 heavy atoms with 2D layout coordinates in
// the unit box.
struct MoleculeGraph {
    std::vector<std::string> atoms;  // element symbols
    std::vector<Bond> bonds;
    std::vector<std::pair<double, double>> coords;  // unit-box layout

    int degree_orders(int i) const {
        int d = 0;
        for (const Bond& b : bonds) {
            if (b.a == i || b.b == i) d += b.order;
        }
        return d;
    }

    bool has_bond(int i, int j) const {
        for (const Bond& b : bonds)
            if ((b.a == i && b.b == j) || (b.a == j && b.b == i)) return true;
        return false;
    }

    std::vector<std::vector<int>> adjacency() const {
        std::vector<std::vector<int>> adj(atoms.size());
        for (const Bond& b : bonds) {
            adj[static_cast<std::size_t>(b.a)].push_back(b.b);
            adj[static_cast<std::size_t>(b.b)].push_back(b.a);
        }
        for (auto& row : adj) std::sort(row.begin(), row.end());
        return adj;
    }
};

namespace detail {

inline int valence_of(const std::string& symbol) {
    for (const auto& [sym, val] : atom_alphabet())
        if (sym == symbol) return val;
    throw InvariantError("unknown element " + symbol);
}

// BFS canonical numbering (1-based), rooted at the atom with the smallest
// (degree, symbol, index) triple; neighbors are visited in ascending
// original-index order.
inline std::vector<int> bfs_numbering(const MoleculeGraph& mol) {
    const auto adj = mol.adjacency();
    int root = 0;
    for (int i = 1; i < static_cast<int>(mol.atoms.size()); ++i) {
        const auto key = [&](int a) {
            return std::make_tuple(static_cast<int>(adj[static_cast<std::size_t>(a)].size()),
                                   mol.atoms[static_cast<std::size_t>(a)], a);
        };
        if (key(i) < key(root)) root = i;
    }
    std::vector<int> number(mol.atoms.size(), 0);
    std::queue<int> q;
    q.push(root);
    number[static_cast<std::size_t>(root)] = 1;
    int next = 2;
    while (!q.empty()) {
        const int v = q.front();
        q.pop();
        for (int w : adj[static_cast<std::size_t>(v)])
            if (number[static_cast<std::size_t>(w)] == 0) {
                number[static_cast<std::size_t>(w)] = next++;
                q.push(w);
            }
    }
    return number;
}

// DFS serialization of the renumbered graph in the InChI connection-layer
// style: chains joined by '-', all but the last branch of a vertex grouped
// in parentheses, ring closures named by their existing number.
inline std::string connection_string(const MoleculeGraph& mol) {
    const auto number = bfs_numbering(mol);
    const int n = static_cast<int>(mol.atoms.size());
    std::vector<std::vector<int>> adj_by_num(static_cast<std::size_t>(n) + 1);
    for (const Bond& b : mol.bonds) {
        adj_by_num[static_cast<std::size_t>(number[static_cast<std::size_t>(b.a)])].push_back(
            number[static_cast<std::size_t>(b.b)]);
        adj_by_num[static_cast<std::size_t>(number[static_cast<std::size_t>(b.b)])].push_back(
            number[static_cast<std::size_t>(b.a)]);
    }
    for (auto& row : adj_by_num) std::sort(row.begin(), row.end());

    std::set<std::pair<int, int>> used;
    std::vector<bool> visited(static_cast<std::size_t>(n) + 1, false);
    visited[1] = true;

    std::function<std::string(int)> from = [&](int v) -> std::string {
        std::vector<int> kids;
        for (int w : adj_by_num[static_cast<std::size_t>(v)]) {
            const auto e = std::minmax(v, w);
            if (!used.count({e.first, e.second})) {
                used.insert({e.first, e.second});
                kids.push_back(w);
            }
        }
        std::vector<std::string> segs;
        for (int w : kids) {
            std::string seg = std::to_string(w);
            if (!visited[static_cast<std::size_t>(w)]) {
                visited[static_cast<std::size_t>(w)] = true;
                seg += from(w);
            }
            segs.push_back(std::move(seg));
        }
        if (segs.empty()) return "";
        if (segs.size() == 1) return "-" + segs[0];
        std::string branches;
        for (std::size_t i = 0; i + 1 < segs.size(); ++i) branches += (i ? "," : "") + segs[i];
        return "(" + branches + ")" + segs.back();
    };
    return "1" + from(1);
}

}  // namespace detail

// Hill-ordered formula: carbon first, then hydrogen, then the rest
// alphabetically; with no carbon the ordering is purely alphabetical
// (hydrogen included in place).
inline std::string hill_formula(const MoleculeGraph& mol) {
    std::map<std::string, int> counts;
    int hydrogens = 0;
    for (std::size_t i = 0; i < mol.atoms.size(); ++i) {
        counts[mol.atoms[i]] += 1;
        hydrogens += std::max(0, detail::valence_of(mol.atoms[i]) - mol.degree_orders(static_cast<int>(i)));
    }
    if (hydrogens > 0) counts["H"] = hydrogens;
    std::vector<std::string> order;
    if (counts.count("C")) {
        order.push_back("C");
        if (counts.count("H")) order.push_back("H");
        for (const auto& [sym, cnt] : counts)
            if (sym != "C" && sym != "H") order.push_back(sym);
    } else {
        for (const auto& [sym, cnt] : counts) order.push_back(sym);
    }
    std::string out;
    for (const auto& sym : order) {
        out += sym;
        if (counts[sym] > 1) out += std::to_string(counts[sym]);
    }
    return out;
}

// Label of a molecule: "InChI=1S/" + formula, plus the "/c" connection layer
// when there are at least two heavy atoms. Syntactically InChI-shaped but
// not chemically canonical; a pure function of the graph.
inline std::string mini_inchi(const MoleculeGraph& mol) {
    std::string label = "InChI=1S/" + hill_formula(mol);
    if (mol.atoms.size() >= 2) label += "/c" + detail::connection_string(mol);
    return label;
}

namespace detail {

// Hex-lattice BFS placement with jitter, normalized into the unit box.
inline void layout(MoleculeGraph& mol, Rng& rng) {
    static const double dirs[6][2] = {{1, 0},       {0.5, 0.866}, {-0.5, 0.866},
                                      {-1, 0},      {-0.5, -0.866}, {0.5, -0.866}};
    const int n = static_cast<int>(mol.atoms.size());
    mol.coords.assign(static_cast<std::size_t>(n), {0.0, 0.0});
    std::vector<bool> placed(static_cast<std::size_t>(n), false);
    const auto adj = mol.adjacency();
    std::queue<int> q;
    placed[0] = true;
    q.push(0);
    auto occupied = [&](double x, double y) {
        for (int i = 0; i < n; ++i)
            if (placed[static_cast<std::size_t>(i)]) {
                const double dx = mol.coords[static_cast<std::size_t>(i)].first - x;
                const double dy = mol.coords[static_cast<std::size_t>(i)].second - y;
                if (dx * dx + dy * dy < 0.25) return true;
            }
        return false;
    };
    while (!q.empty()) {
        const int v = q.front();
        q.pop();
        const auto [vx, vy] = mol.coords[static_cast<std::size_t>(v)];
        int spin = static_cast<int>(rng.below(6));
        for (int w : adj[static_cast<std::size_t>(v)]) {
            if (placed[static_cast<std::size_t>(w)]) continue;
            bool done = false;
            for (int radius = 1; radius <= 3 && !done; ++radius)
                for (int d = 0; d < 6 && !done; ++d) {
                    const int dir = (spin + d) % 6;
                    const double x = vx + dirs[dir][0] * radius;
                    const double y = vy + dirs[dir][1] * radius;
                    if (!occupied(x, y)) {
                        mol.coords[static_cast<std::size_t>(w)] = {x, y};
                        placed[static_cast<std::size_t>(w)] = true;
                        done = true;
                    }
                }
            if (!done) {
                mol.coords[static_cast<std::size_t>(w)] = {vx + rng.uniform() * 4 - 2, vy + rng.uniform() * 4 - 2};
                placed[static_cast<std::size_t>(w)] = true;
            }
            q.push(w);
            ++spin;
        }
    }
    for (auto& [x, y] : mol.coords) {
        x += (rng.uniform() - 0.5) * 0.25;
        y += (rng.uniform() - 0.5) * 0.25;
    }
    double min_x = 1e30, min_y = 1e30, max_x = -1e30, max_y = -1e30;
    for (const auto& [x, y] : mol.coords) {
        min_x = std::min(min_x, x);
        min_y = std::min(min_y, y);
        max_x = std::max(max_x, x);
        max_y = std::max(max_y, y);
    }
    const double span = std::max({max_x - min_x, max_y - min_y, 1e-9});
    const double lo = 0.1, hi = 0.9;
    for (auto& [x, y] : mol.coords) {
        x = lo + (x - min_x) / span * (hi - lo);
        y = lo + (y - min_y) / span * (hi - lo);
    }
}

}  // namespace detail

// Random connected tree-plus-chords graph (<= 13 atoms, <= 2 chords, bond
// orders respect the valence table so implicit hydrogen counts never go
// negative), with layout and label. Same seed, same molecule.
inline MoleculeGraph gen_molecule(Rng& rng, int max_atoms = 13) {
    MoleculeGraph mol;
    const auto& alphabet = atom_alphabet();
    const int target = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_atoms)));
    auto spare = [&](int i) {
        return detail::valence_of(mol.atoms[static_cast<std::size_t>(i)]) - mol.degree_orders(i);
    };

    mol.atoms.push_back(alphabet[rng.below(alphabet.size())].first);
    for (int i = 1; i < target; ++i) {
        std::vector<int> eligible;
        for (int a = 0; a < static_cast<int>(mol.atoms.size()); ++a)
            if (spare(a) >= 1) eligible.push_back(a);
        if (eligible.empty()) break;
        const int parent = eligible[rng.below(eligible.size())];
        mol.atoms.push_back(alphabet[rng.below(alphabet.size())].first);
        mol.bonds.push_back({parent, i, 1});
    }
    const int n = static_cast<int>(mol.atoms.size());
    const int chords = static_cast<int>(rng.below(3));
    for (int c = 0; c < chords && n >= 3; ++c)
        for (int attempt = 0; attempt < 20; ++attempt) {
            const int i = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
            const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
            if (i == j || mol.has_bond(i, j) || spare(i) < 1 || spare(j) < 1) continue;
            mol.bonds.push_back({std::min(i, j), std::max(i, j), 1});
            break;
        }
    for (Bond& b : mol.bonds)
        if (rng.uniform() < 0.3 && spare(b.a) >= 1 && spare(b.b) >= 1) b.order = 2;

    detail::layout(mol, rng);
    return mol;
}

}  // namespace img2inchi
