#pragma once

#include "causeq/diagnostics.hpp"
#include "causeq/hawkes.hpp"

namespace fixture {

// Five types A..E: a strong cycle A->B->C->D->E->A and three weak edges.
inline causeq::HawkesModel planted_five() {
    causeq::HawkesModel m(5, causeq::KernelBank{{0.5, 1.5}, 0.3});
    for (std::size_t v = 0; v < 5; ++v) m.mu(v) = 0.1;
    m.a(1, 0, 0) = 0.5;
    m.a(2, 1, 1) = 0.5;
    m.a(3, 2, 0) = 0.5;
    m.a(4, 3, 1) = 0.5;
    m.a(0, 4, 0) = 0.5;
    m.a(1, 3, 1) = 0.05;
    m.a(2, 4, 0) = 0.05;
    m.a(3, 0, 1) = 0.05;
    return m;
}

inline std::vector<std::string> planted_names() { return {"A", "B", "C", "D", "E"}; }

inline causeq::FitConfig planted_config() {
    causeq::FitConfig c;
    c.alpha = 1000.0;
    c.alpha_u = 300.0;
    return c;
}

}  // namespace fixture
