#include "causeq/layout.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <queue>
#include <stdexcept>

#include <Eigen/Dense>

namespace causeq {

namespace {

constexpr double kEdgeLengthRadii = 4.0;
constexpr double kCircleWeight = 1.0;
constexpr double kStabilizationWeight = 1.0;
constexpr double kRelativeStop = 1e-4;
constexpr std::size_t kMaxIterations = 300;
constexpr std::size_t kMaxBacktracks = 10;
constexpr std::size_t kPolishRounds = 50;
constexpr double kProximal = 1e-9;
constexpr double kCircleFloor = 1e-9;

struct Adjacency {
    std::vector<std::vector<TypeId>> out;
    std::vector<std::vector<TypeId>> undirected;
    std::vector<char> self_loop;
    std::vector<std::size_t> degree;
};

Adjacency build_adjacency(const CausalGraph& graph) {
    const std::size_t n = graph.nodes.size();
    Adjacency adj;
    adj.out.assign(n, {});
    adj.undirected.assign(n, {});
    adj.self_loop.assign(n, 0);
    adj.degree.assign(n, 0);
    for (const auto& edge : graph.edges) {
        if (edge.removed) continue;
        if (edge.cause >= n || edge.effect >= n) throw std::invalid_argument("edge references an unknown node");
        if (edge.cause == edge.effect) {
            adj.self_loop[edge.cause] = 1;
            continue;
        }
        adj.out[edge.cause].push_back(edge.effect);
        adj.undirected[edge.cause].push_back(edge.effect);
        adj.undirected[edge.effect].push_back(edge.cause);
        ++adj.degree[edge.cause];
        ++adj.degree[edge.effect];
    }
    for (auto* lists : {&adj.out, &adj.undirected}) {
        for (auto& list : *lists) {
            std::sort(list.begin(), list.end());
            list.erase(std::unique(list.begin(), list.end()), list.end());
        }
    }
    return adj;
}

// Tarjan's algorithm, iterative.
std::vector<std::vector<TypeId>> strongly_connected(const std::vector<std::vector<TypeId>>& out) {
    const std::size_t n = out.size();
    constexpr std::size_t unvisited = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> index(n, unvisited), low(n, 0);
    std::vector<char> on_stack(n, 0);
    std::vector<TypeId> stack;
    std::vector<std::vector<TypeId>> components;
    std::size_t counter = 0;
    for (TypeId root = 0; root < n; ++root) {
        if (index[root] != unvisited) continue;
        std::vector<std::pair<TypeId, std::size_t>> frames{{root, 0}};
        index[root] = low[root] = counter++;
        stack.push_back(root);
        on_stack[root] = 1;
        while (!frames.empty()) {
            auto& [node, next] = frames.back();
            if (next < out[node].size()) {
                const TypeId child = out[node][next++];
                if (index[child] == unvisited) {
                    index[child] = low[child] = counter++;
                    stack.push_back(child);
                    on_stack[child] = 1;
                    frames.push_back({child, 0});
                } else if (on_stack[child]) {
                    low[node] = std::min(low[node], index[child]);
                }
                continue;
            }
            const TypeId finished = node;
            frames.pop_back();
            if (!frames.empty()) low[frames.back().first] = std::min(low[frames.back().first], low[finished]);
            if (low[finished] == index[finished]) {
                std::vector<TypeId> component;
                TypeId member;
                do {
                    member = stack.back();
                    stack.pop_back();
                    on_stack[member] = 0;
                    component.push_back(member);
                } while (member != finished);
                std::sort(component.begin(), component.end());
                components.push_back(std::move(component));
            }
        }
    }
    return components;
}

double row_y(int depth, int max_depth, const Canvas& canvas, double node_radius) {
    if (max_depth == 0) return canvas.height / 2.0;
    const double pad = std::min(2.0 * node_radius, canvas.height / 4.0);
    return pad + (canvas.height - 2.0 * pad) * static_cast<double>(depth) / static_cast<double>(max_depth);
}

// Everything below works in units of the target edge length.
struct CircleTerm {
    std::vector<std::size_t> members;  // node indices, in reference-vertex order
    std::vector<Point> reference;      // regular polygon offsets
    std::vector<double> omega;
    std::vector<std::pair<std::size_t, std::size_t>> edges;  // positions in `members`
};

struct Problem {
    std::size_t n{0};
    std::vector<double> distance;  // n * n hop counts, negative when unreachable
    std::vector<double> row;       // fixed y of every node
    std::vector<char> free_y;
    std::vector<CircleTerm> circles;
    std::vector<char> anchored;
    std::vector<double> anchor_x;
    std::vector<std::vector<std::size_t>> rows;  // nodes sharing a depth
    double spacing{0.5};
    double usable_width{0.0};
    double y_min{0.0};
    double y_max{0.0};
};

struct Similarity {
    double scale{1.0};
    Eigen::Matrix2d rotation{Eigen::Matrix2d::Identity()};
};

// Weighted Procrustes: argmin over s * R of sum omega_i |s R (p_i - pbar) - (q_i - qbar)|^2.
Similarity fit_similarity(const CircleTerm& circle, const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t m = circle.members.size();
    double total = 0.0;
    Eigen::Vector2d pbar = Eigen::Vector2d::Zero(), qbar = Eigen::Vector2d::Zero();
    for (std::size_t k = 0; k < m; ++k) {
        const double w = circle.omega[k];
        total += w;
        pbar += w * Eigen::Vector2d(x[circle.members[k]], y[circle.members[k]]);
        qbar += w * Eigen::Vector2d(circle.reference[k].x, circle.reference[k].y);
    }
    pbar /= total;
    qbar /= total;
    Eigen::Matrix2d cross = Eigen::Matrix2d::Zero();
    double spread = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        const Eigen::Vector2d p = Eigen::Vector2d(x[circle.members[k]], y[circle.members[k]]) - pbar;
        const Eigen::Vector2d q = Eigen::Vector2d(circle.reference[k].x, circle.reference[k].y) - qbar;
        cross += circle.omega[k] * p * q.transpose();
        spread += circle.omega[k] * p.squaredNorm();
    }
    Similarity similarity;
    if (!(spread > 0.0)) return similarity;
    Eigen::JacobiSVD<Eigen::Matrix2d> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const double trace = svd.singularValues().sum();
    if (!(trace > 0.0)) return similarity;
    similarity.rotation = svd.matrixV() * svd.matrixU().transpose();
    similarity.scale = trace / spread;
    return similarity;
}

double objective(const Problem& problem, const std::vector<double>& x, const std::vector<double>& y) {
    double total = 0.0;
    for (std::size_t i = 0; i < problem.n; ++i) {
        for (std::size_t j = i + 1; j < problem.n; ++j) {
            const double d = problem.distance[i * problem.n + j];
            if (d <= 0.0) continue;
            const double gap = std::abs(x[i] - x[j]) - d;
            total += gap * gap / (d * d);
        }
    }
    for (const auto& circle : problem.circles) {
        const auto similarity = fit_similarity(circle, x, y);
        for (const auto& [a, b] : circle.edges) {
            const std::size_t u = circle.members[a], v = circle.members[b];
            const Eigen::Vector2d mapped =
                similarity.scale * similarity.rotation * Eigen::Vector2d(x[u] - x[v], y[u] - y[v]);
            const Eigen::Vector2d target(circle.reference[a].x - circle.reference[b].x,
                                         circle.reference[a].y - circle.reference[b].y);
            total += kCircleWeight * (mapped - target).squaredNorm() / std::max(mapped.squaredNorm(), kCircleFloor);
        }
    }
    for (std::size_t i = 0; i < problem.n; ++i) {
        if (!problem.anchored[i]) continue;
        const double shift = x[i] - problem.anchor_x[i];
        total += kStabilizationWeight * shift * shift;
    }
    return total;
}

// Pins each circle's mean y to its row, then shifts it back inside the canvas.
// Both moves translate the whole circle, which leaves the objective unchanged.
void recenter_circles(const Problem& problem, std::vector<double>& y) {
    for (const auto& circle : problem.circles) {
        double mean = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t member : circle.members) {
            mean += y[member];
            lo = std::min(lo, y[member]);
            hi = std::max(hi, y[member]);
        }
        mean /= static_cast<double>(circle.members.size());
        double shift = problem.row[circle.members.front()] - mean;
        if (hi - lo <= problem.y_max - problem.y_min) {
            if (lo + shift < problem.y_min)
                shift = problem.y_min - lo;
            else if (hi + shift > problem.y_max)
                shift = problem.y_max - hi;
        }
        for (std::size_t member : circle.members) y[member] += shift;
    }
}

// Least-squares order-preserving placement of `xs` with consecutive gaps >= spacing.
// Entries in blocks that need no move are left bit-identical.
void separate_sorted(std::vector<double*>& xs, double spacing) {
    std::vector<double> level;
    std::vector<std::size_t> count;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        level.push_back(*xs[i] - static_cast<double>(i) * spacing);
        count.push_back(1);
        while (level.size() > 1 && level[level.size() - 2] > level.back()) {
            const std::size_t merged = count[count.size() - 2] + count.back();
            const double value = (level[level.size() - 2] * static_cast<double>(count[count.size() - 2]) +
                                  level.back() * static_cast<double>(count.back())) /
                                 static_cast<double>(merged);
            level.pop_back();
            count.pop_back();
            level.back() = value;
            count.back() = merged;
        }
    }
    std::size_t i = 0;
    for (std::size_t block = 0; block < level.size(); ++block)
        for (std::size_t k = 0; k < count[block]; ++k, ++i)
            if (count[block] > 1) *xs[i] = level[block] + static_cast<double>(i) * spacing;
}

void project_rows(const Problem& problem, std::vector<double>& x) {
    for (const auto& row : problem.rows) {
        if (row.size() < 2) continue;
        if (static_cast<double>(row.size() - 1) * problem.spacing > problem.usable_width) continue;
        std::vector<std::size_t> order = row;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
        std::vector<double*> xs;
        for (std::size_t i : order) xs.push_back(&x[i]);
        separate_sorted(xs, problem.spacing);
    }
}

// Minimizer of the quadratic majorant at (x, y), with M and the circle
// weights frozen at the current point.
void majorize(const Problem& problem, const std::vector<double>& x, const std::vector<double>& y,
              std::vector<double>& next_x, std::vector<double>& next_y) {
    const std::size_t n = problem.n;
    Eigen::MatrixXd ax = Eigen::MatrixXd::Zero(n, n), ay = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd bx = Eigen::VectorXd::Zero(n), by = Eigen::VectorXd::Zero(n);
    auto add = [](Eigen::MatrixXd& a, Eigen::VectorXd& b, std::size_t i, std::size_t j, double c, double t) {
        a(i, i) += c;
        a(j, j) += c;
        a(i, j) -= c;
        a(j, i) -= c;
        b(i) += c * t;
        b(j) -= c * t;
    };
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = problem.distance[i * n + j];
            if (d <= 0.0) continue;
            const double sign = x[i] > x[j] ? 1.0 : -1.0;
            add(ax, bx, i, j, 1.0 / (d * d), d * sign);
        }
    }
    for (const auto& circle : problem.circles) {
        const auto similarity = fit_similarity(circle, x, y);
        const double s = similarity.scale;
        for (const auto& [a, b] : circle.edges) {
            const std::size_t u = circle.members[a], v = circle.members[b];
            const Eigen::Vector2d mapped = s * similarity.rotation * Eigen::Vector2d(x[u] - x[v], y[u] - y[v]);
            const double weight = kCircleWeight / std::max(mapped.squaredNorm(), kCircleFloor);
            const Eigen::Vector2d target(circle.reference[a].x - circle.reference[b].x,
                                         circle.reference[a].y - circle.reference[b].y);
            const Eigen::Vector2d pulled = similarity.rotation.transpose() * target / s;
            add(ax, bx, u, v, weight * s * s, pulled.x());
            add(ay, by, u, v, weight * s * s, pulled.y());
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (problem.anchored[i]) {
            ax(i, i) += kStabilizationWeight;
            bx(i) += kStabilizationWeight * problem.anchor_x[i];
        }
        ax(i, i) += kProximal;
        bx(i) += kProximal * x[i];
        ay(i, i) += kProximal;
        by(i) += kProximal * y[i];
    }
    const Eigen::VectorXd solved_x = ax.ldlt().solve(bx);
    next_x.assign(solved_x.data(), solved_x.data() + n);
    next_y = y;
    if (!problem.circles.empty()) {
        const Eigen::VectorXd solved_y = ay.ldlt().solve(by);
        for (std::size_t i = 0; i < n; ++i)
            if (problem.free_y[i]) next_y[i] = solved_y(i);
        recenter_circles(problem, next_y);
    }
}

struct Solution {
    std::vector<double> x, y;
    std::vector<double> trace;
};

// Majorization with backtracking; every candidate is projected onto
// overlap-free rows and must lower the objective by the relative threshold.
Solution optimize(const Problem& problem, std::vector<double> x, std::vector<double> y) {
    recenter_circles(problem, y);
    project_rows(problem, x);
    Solution solution;
    double current = objective(problem, x, y);
    solution.trace.push_back(current);
    std::vector<double> cx, cy, tx(problem.n), ty(problem.n);
    for (std::size_t iter = 0; iter < kMaxIterations; ++iter) {
        majorize(problem, x, y, cx, cy);
        bool accepted = false;
        double step = 1.0;
        for (std::size_t attempt = 0; attempt <= kMaxBacktracks && !accepted; ++attempt, step *= 0.5) {
            for (std::size_t i = 0; i < problem.n; ++i) {
                tx[i] = x[i] + step * (cx[i] - x[i]);
                ty[i] = y[i] + step * (cy[i] - y[i]);
            }
            project_rows(problem, tx);
            const double value = objective(problem, tx, ty);
            if (current - value > 0.0 && current - value >= kRelativeStop * std::abs(current)) {
                x = tx;
                y = ty;
                current = value;
                accepted = true;
            }
        }
        if (!accepted) break;
        solution.trace.push_back(current);
    }
    solution.x = std::move(x);
    solution.y = std::move(y);
    return solution;
}

// Traversal order of a circle: preorder DFS along its edges from the smallest member.
std::vector<TypeId> circle_order(const std::vector<TypeId>& members, const Adjacency& adj) {
    std::vector<TypeId> order;
    std::vector<char> seen(adj.out.size(), 0);
    std::vector<char> inside(adj.out.size(), 0);
    for (TypeId m : members) inside[m] = 1;
    std::function<void(TypeId)> visit = [&](TypeId node) {
        seen[node] = 1;
        order.push_back(node);
        for (TypeId next : adj.out[node])
            if (inside[next] && !seen[next]) visit(next);
    };
    visit(members.front());
    for (TypeId m : members)
        if (!seen[m]) visit(m);
    return order;
}

struct Prepared {
    Problem problem;
    std::vector<double> init_x, init_y;
    double unit{1.0};
    bool any_anchor{false};
};

Prepared prepare(const LayoutInput& input, const std::vector<int>& depths, const Circles& circles) {
    input.validate();
    const auto& graph = input.graph;
    const std::size_t n = graph.nodes.size();
    if (depths.size() != n) throw std::invalid_argument("depths do not match the graph");
    for (const auto& circle : circles)
        for (TypeId v : circle)
            if (v >= n) throw std::invalid_argument("circle references an unknown node");
    const auto adj = build_adjacency(graph);
    Prepared prep;
    prep.unit = kEdgeLengthRadii * input.node_radius;
    int max_depth = 0;
    for (int d : depths) max_depth = std::max(max_depth, d);

    auto& problem = prep.problem;
    problem.n = n;
    problem.spacing = 2.0 * input.node_radius / prep.unit;
    problem.usable_width = std::max(0.0, input.canvas.width - 2.0 * input.node_radius) / prep.unit;
    problem.y_min = input.node_radius / prep.unit;
    problem.y_max = (input.canvas.height - input.node_radius) / prep.unit;
    problem.distance.assign(n * n, -1.0);
    problem.row.resize(n);
    problem.free_y.assign(n, 0);
    problem.anchored.assign(n, 0);
    problem.anchor_x.assign(n, 0.0);
    std::map<int, std::vector<std::size_t>> rows;
    for (TypeId v = 0; v < n; ++v) {
        problem.row[v] = row_y(depths[v], max_depth, input.canvas, input.node_radius) / prep.unit;
        rows[depths[v]].push_back(v);
    }
    for (auto& [depth, members] : rows) problem.rows.push_back(std::move(members));

    // Hop distances and connected components.
    std::vector<std::size_t> component(n, n);
    std::vector<std::vector<TypeId>> components;
    for (TypeId source = 0; source < n; ++source) {
        std::vector<int> hops(n, -1);
        std::vector<TypeId> reached{source};
        hops[source] = 0;
        for (std::size_t k = 0; k < reached.size(); ++k)
            for (TypeId next : adj.undirected[reached[k]])
                if (hops[next] < 0) {
                    hops[next] = hops[reached[k]] + 1;
                    reached.push_back(next);
                }
        for (TypeId target = 0; target < n; ++target)
            if (hops[target] > 0) problem.distance[source * n + target] = hops[target];
        if (component[source] == n) {
            std::sort(reached.begin(), reached.end());
            for (TypeId v : reached) component[v] = components.size();
            components.push_back(std::move(reached));
        }
    }

    // Circle terms; members are spread on their reference polygon initially.
    std::vector<std::size_t> unit_of(n);
    for (TypeId v = 0; v < n; ++v) unit_of[v] = v;
    std::vector<Point> offset(n);
    for (const auto& circle : circles) {
        for (TypeId v : circle) unit_of[v] = circle.front();
        if (circle.size() < 2) continue;
        CircleTerm term;
        const auto order = circle_order(circle, adj);
        const double radius = static_cast<double>(order.size()) * input.node_radius / prep.unit;
        std::vector<std::size_t> position_in(n, 0);
        for (std::size_t k = 0; k < order.size(); ++k) {
            const double angle = -std::numbers::pi / 2.0 +
                                 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(order.size());
            term.members.push_back(order[k]);
            term.reference.push_back({radius * std::cos(angle), radius * std::sin(angle)});
            term.omega.push_back(static_cast<double>(std::max<std::size_t>(1, adj.degree[order[k]])));
            position_in[order[k]] = k;
            problem.free_y[order[k]] = 1;
            offset[order[k]] = term.reference.back();
        }
        for (TypeId u : order)
            for (TypeId v : adj.out[u])
                if (std::binary_search(circle.begin(), circle.end(), v))
                    term.edges.push_back({position_in[u], position_in[v]});
        problem.circles.push_back(std::move(term));
    }

    for (TypeId v = 0; v < n; ++v) {
        auto it = input.previous_positions.find(graph.nodes[v]);
        if (it == input.previous_positions.end()) continue;
        problem.anchored[v] = 1;
        problem.anchor_x[v] = it->second.x / prep.unit;
        prep.any_anchor = true;
    }

    // Initial x: units spread along each row of their component; components
    // without anchors packed left to right, one radius apart.
    prep.init_x.assign(n, 0.0);
    prep.init_y = problem.row;
    const double half = input.node_radius / prep.unit;
    double cursor = -std::numeric_limits<double>::infinity();
    for (TypeId v = 0; v < n; ++v)
        if (problem.anchored[v]) cursor = std::max(cursor, problem.anchor_x[v] + 2.0 * half);
    if (!std::isfinite(cursor)) cursor = 0.0;
    for (const auto& members : components) {
        std::map<int, std::vector<TypeId>> row_units;
        for (TypeId v : members)
            if (unit_of[v] == v) row_units[depths[v]].push_back(v);
        std::vector<double> unit_x(n, 0.0);
        for (const auto& [depth, units] : row_units)
            for (std::size_t k = 0; k < units.size(); ++k)
                unit_x[units[k]] = static_cast<double>(k) - 0.5 * static_cast<double>(units.size() - 1);
        double anchored_sum = 0.0;
        std::size_t anchored_count = 0;
        for (TypeId v : members)
            if (problem.anchored[v]) {
                anchored_sum += problem.anchor_x[v];
                ++anchored_count;
            }
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (TypeId v : members) {
            prep.init_x[v] = unit_x[unit_of[v]] + offset[v].x;
            prep.init_y[v] = problem.row[v] + offset[v].y;
            lo = std::min(lo, prep.init_x[v]);
            hi = std::max(hi, prep.init_x[v]);
        }
        const double shift = anchored_count > 0 ? anchored_sum / static_cast<double>(anchored_count) - 0.5 * (lo + hi)
                                                : cursor + half - lo;
        for (TypeId v : members) prep.init_x[v] += shift;
        if (anchored_count == 0) cursor += (hi - lo) + 3.0 * half;
        for (TypeId v : members) {
            if (!problem.anchored[v]) continue;
            prep.init_x[v] = problem.anchor_x[v];
            if (problem.free_y[v]) prep.init_y[v] = input.previous_positions.at(graph.nodes[v]).y / prep.unit;
        }
    }
    return prep;
}

bool fit_canvas_x(std::vector<Point*>& points, const Canvas& canvas, double radius) {
    if (points.empty()) return false;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const Point* p : points) {
        lo = std::min(lo, p->x);
        hi = std::max(hi, p->x);
    }
    const double left = radius, right = canvas.width - radius;
    if (lo >= left && hi <= right) return false;
    if (right <= left) {
        for (Point* p : points) p->x = canvas.width / 2.0;
        return true;
    }
    if (hi - lo <= right - left) {
        const double shift = lo < left ? left - lo : right - hi;
        for (Point* p : points) p->x += shift;
        return false;
    }
    const double factor = (right - left) / (hi - lo);
    for (Point* p : points) p->x = left + (p->x - lo) * factor;
    return true;
}

void clamp_y(std::map<std::string, Point>& positions, const Canvas& canvas, double radius) {
    for (auto& [name, p] : positions) {
        if (canvas.height <= 2.0 * radius)
            p.y = canvas.height / 2.0;
        else
            p.y = std::clamp(p.y, radius, canvas.height - radius);
    }
}

std::vector<Point*> all_points(std::map<std::string, Point>& positions) {
    std::vector<Point*> points;
    for (auto& [name, p] : positions) points.push_back(&p);
    return points;
}

void describe(LayoutResult& result, const CausalGraph& graph, const std::vector<int>& depths, const Circles& circles) {
    for (std::size_t v = 0; v < graph.nodes.size(); ++v) result.depths[graph.nodes[v]] = depths[v];
    for (const auto& circle : circles) {
        std::vector<std::string> names;
        for (TypeId v : circle) names.push_back(graph.nodes[v]);
        result.circles.push_back(std::move(names));
    }
}

}  // namespace

void LayoutInput::validate() const {
    if (!(canvas.width > 0.0) || !(canvas.height > 0.0)) throw std::invalid_argument("canvas must have positive size");
    if (!(node_radius > 0.0)) throw std::invalid_argument("node radius must be positive");
}

Circles detect_circles(const CausalGraph& graph) {
    const auto adj = build_adjacency(graph);
    Circles circles;
    for (auto& component : strongly_connected(adj.out))
        if (component.size() >= 2 || adj.self_loop[component.front()]) circles.push_back(std::move(component));
    std::sort(circles.begin(), circles.end());
    return circles;
}

std::vector<int> assign_depths(const CausalGraph& graph, const Circles& circles) {
    const std::size_t n = graph.nodes.size();
    const auto adj = build_adjacency(graph);
    std::vector<std::size_t> unit(n);
    for (TypeId v = 0; v < n; ++v) unit[v] = v;
    for (const auto& circle : circles)
        for (TypeId v : circle) unit[v] = circle.front();

    std::vector<std::vector<std::size_t>> next(n);
    std::vector<std::size_t> indegree(n, 0);
    for (TypeId u = 0; u < n; ++u)
        for (TypeId v : adj.out[u])
            if (unit[u] != unit[v]) next[unit[u]].push_back(unit[v]);
    for (auto& list : next) {
        std::sort(list.begin(), list.end());
        list.erase(std::unique(list.begin(), list.end()), list.end());
        for (std::size_t target : list) ++indegree[target];
    }

    std::vector<int> depth(n, 0);
    std::vector<char> done(n, 0);
    std::size_t remaining = 0;
    for (TypeId v = 0; v < n; ++v)
        if (unit[v] == v) ++remaining;
    std::queue<std::size_t> ready;
    for (TypeId v = 0; v < n; ++v)
        if (unit[v] == v && indegree[v] == 0) ready.push(v);
    while (remaining > 0) {
        if (ready.empty()) {
            // Only reachable when `circles` leaves a cycle uncontracted: start
            // from the unit holding the cause of the strongest pending edge.
            const CausalEdge* strongest = nullptr;
            for (const auto& edge : graph.edges) {
                if (edge.removed || done[unit[edge.cause]]) continue;
                if (!strongest || edge.strength > strongest->strength) strongest = &edge;
            }
            std::size_t start = 0;
            if (strongest) {
                start = unit[strongest->cause];
            } else {
                while (unit[start] != start || done[start]) ++start;
            }
            indegree[start] = 0;
            ready.push(start);
        }
        const std::size_t u = ready.front();
        ready.pop();
        if (done[u]) continue;
        done[u] = 1;
        --remaining;
        for (std::size_t v : next[u]) {
            if (done[v]) continue;
            depth[v] = std::max(depth[v], depth[u] + 1);
            if (indegree[v] > 0 && --indegree[v] == 0) ready.push(v);
        }
    }
    std::vector<int> result(n);
    for (TypeId v = 0; v < n; ++v) result[v] = depth[unit[v]];
    return result;
}

LayoutResult solve_positions(const LayoutInput& input, const std::vector<int>& depths, const Circles& circles) {
    auto prep = prepare(input, depths, circles);
    const auto& graph = input.graph;
    const auto solution = optimize(prep.problem, prep.init_x, prep.init_y);

    LayoutResult result;
    result.objective_trace = solution.trace;
    for (std::size_t v = 0; v < graph.nodes.size(); ++v)
        result.positions[graph.nodes[v]] = {solution.x[v] * prep.unit, solution.y[v] * prep.unit};
    if (!prep.any_anchor && !result.positions.empty()) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& [name, p] : result.positions) {
            lo = std::min(lo, p.x);
            hi = std::max(hi, p.x);
        }
        const double shift = input.canvas.width / 2.0 - 0.5 * (lo + hi);
        for (auto& [name, p] : result.positions) p.x += shift;
    }
    auto points = all_points(result.positions);
    result.crowded = fit_canvas_x(points, input.canvas, input.node_radius);
    clamp_y(result.positions, input.canvas, input.node_radius);
    describe(result, graph, depths, circles);
    result.stress = layout_objective(input, depths, circles, result.positions);
    return result;
}

double layout_objective(const LayoutInput& input, const std::vector<int>& depths, const Circles& circles,
                        const std::map<std::string, Point>& positions) {
    const auto prep = prepare(input, depths, circles);
    const auto& problem = prep.problem;
    std::vector<double> x(problem.n), y(problem.n);
    for (std::size_t v = 0; v < problem.n; ++v) {
        const auto& name = input.graph.nodes[v];
        auto it = positions.find(name);
        if (it == positions.end()) throw std::invalid_argument("missing position for node '" + name + "'");
        x[v] = it->second.x / prep.unit;
        y[v] = it->second.y / prep.unit;
    }
    return objective(problem, x, y);
}

LayoutResult remove_overlaps(LayoutResult result, double node_radius, double canvas_width) {
    if (!(node_radius > 0.0)) throw std::invalid_argument("node radius must be positive");
    std::map<int, std::vector<Point*>> rows;
    for (auto& [name, p] : result.positions) {
        auto it = result.depths.find(name);
        rows[it == result.depths.end() ? 0 : it->second].push_back(&p);
    }
    const double spacing = 2.0 * node_radius;
    for (auto& [depth, row] : rows) {
        std::stable_sort(row.begin(), row.end(), [](const Point* a, const Point* b) { return a->x < b->x; });
        std::vector<double*> xs;
        for (Point* p : row) xs.push_back(&p->x);
        separate_sorted(xs, spacing);
        const std::size_t m = row.size();
        if (m > 1 && row.back()->x - row.front()->x > canvas_width - 2.0 * node_radius) {
            result.crowded = true;
            const double usable = std::max(0.0, canvas_width - 2.0 * node_radius);
            for (std::size_t k = 0; k < m; ++k)
                row[k]->x = node_radius + usable * static_cast<double>(k) / static_cast<double>(m - 1);
        }
    }
    auto points = all_points(result.positions);
    if (fit_canvas_x(points, Canvas{canvas_width, 1.0}, node_radius)) result.crowded = true;
    return result;
}

LayoutResult layout(const LayoutInput& input) {
    input.validate();
    const auto circles = detect_circles(input.graph);
    const auto depths = assign_depths(input.graph, circles);
    auto result = remove_overlaps(solve_positions(input, depths, circles), input.node_radius, input.canvas.width);
    const auto trace = result.objective_trace;
    // Re-anchor to the current output until an anchored pass accepts no step,
    // so that laying out the same graph again reproduces these positions.
    LayoutInput anchored = input;
    for (std::size_t round = 0; round < kPolishRounds; ++round) {
        anchored.previous_positions = result.positions;
        auto next = remove_overlaps(solve_positions(anchored, depths, circles), input.node_radius, input.canvas.width);
        const bool settled = next.objective_trace.size() == 1;
        const bool crowded = result.crowded || next.crowded;
        result = std::move(next);
        result.crowded = crowded;
        if (settled) break;
    }
    result.objective_trace = trace;
    result.stress = layout_objective(input, depths, circles, result.positions);
    return result;
}

}  // namespace causeq
