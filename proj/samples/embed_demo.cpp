// Shows the classical-vs-echo difference on one triplet whose query and
// negative share their first half word for word.

#include <iomanip>
#include <iostream>

#include "echoembed/echoembed.hpp"

int main() {
  namespace ee = echoembed;
  ee::ToyModelConfig config;
  config.seed = 3;
  ee::ToyBackend backend(ee::ToyModel::init(config));

  const auto triplets = ee::load_corpus(ee::Structure::S3);
  const auto& t = triplets.front();
  std::cout << "q : " << t[ee::Member::q] << "\ns+: " << t[ee::Member::s_plus] << "\ns-: " << t[ee::Member::s_minus]
            << "\n\n";

  for (auto strategy : {ee::Strategy::classical, ee::Strategy::echo}) {
    const auto fn = ee::a_span_embedder(ee::default_template(strategy), ee::Pooling::mean, backend);
    const auto q = fn(t, ee::Member::q);
    std::cout << std::setw(9) << ee::to_string(strategy) << "  A-span cos(q,s+) = " << std::setprecision(6)
              << ee::cosine(q, fn(t, ee::Member::s_plus)) << "  cos(q,s-) = " << ee::cosine(q, fn(t, ee::Member::s_minus))
              << '\n';
  }
}
