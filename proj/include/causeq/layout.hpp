#pragma once

#include <map>
#include <string>
#include <vector>

#include "causeq/hawkes.hpp"

namespace causeq {

struct Point {
    double x{0.0};
    double y{0.0};

    friend bool operator==(const Point&, const Point&) = default;
};

struct Canvas {
    double width{800.0};
    double height{600.0};
};

struct LayoutInput {
    // Removed edges are ignored.
    CausalGraph graph;
    Canvas canvas;
    // Stabilization anchors from an earlier layout, by node name.
    std::map<std::string, Point> previous_positions;
    double node_radius{12.0};

    // Throws std::invalid_argument on a non-positive canvas or radius.
    void validate() const;
};

// Node sets are indices into graph.nodes, ascending; sets ordered by first member.
using Circles = std::vector<std::vector<TypeId>>;

struct LayoutResult {
    std::map<std::string, Point> positions;
    std::map<std::string, int> depths;
    std::vector<std::vector<std::string>> circles;
    // Layout objective at the returned positions, lengths in units of the
    // target edge length (4 node radii).
    double stress{0.0};
    // Some row did not fit the canvas width and was compressed.
    bool crowded{false};
    // Objective after initialization and after every accepted iteration.
    std::vector<double> objective_trace;
};

// Strongly connected components with two or more nodes, and single nodes with a self-loop.
Circles detect_circles(const CausalGraph& graph);

// Longest-path layering of the graph with every circle contracted to one unit;
// members share their unit's depth. Indexed like graph.nodes.
std::vector<int> assign_depths(const CausalGraph& graph, const Circles& circles);

// Rows are fixed by depth; x (and the in-plane shape of each circle) minimize
// the x-stress plus circle-shape terms, plus the stabilization term when
// previous positions are given.
LayoutResult solve_positions(const LayoutInput& input, const std::vector<int>& depths, const Circles& circles);

// Objective value of `positions` (pixels) for the given problem.
double layout_objective(const LayoutInput& input, const std::vector<int>& depths, const Circles& circles,
                        const std::map<std::string, Point>& positions);

// Per depth row: order-preserving shifts with gaps >= 2 * node_radius and the
// least squared displacement. Rows wider than the canvas are compressed and
// flagged as crowded.
LayoutResult remove_overlaps(LayoutResult result, double node_radius, double canvas_width);

// Full pipeline: circles, depths, positions, overlap removal, then polishing
// rounds that re-anchor to the current output until it is a fixed point.
LayoutResult layout(const LayoutInput& input);

}  // namespace causeq
