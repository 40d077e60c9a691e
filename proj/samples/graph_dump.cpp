// Prints the nodes and both edge-code matrices of the first fixture candidate.

#include <iostream>

#include "tmeg/fixtures.hpp"

using namespace tmeg;

int main() {
  const Corpus corpus = fixtures::tiny_corpus();
  const ImageIndex index(corpus);
  const TmegGraph g = assemble_instance_graph(fixtures::tiny_instances().front(), 0, corpus, index);

  for (const Node& n : g.nodes) {
    std::cout << n.global_index << '\t' << (n.modality == Modality::Text ? "text" : "visual") << '\t'
              << to_string(n.kind) << "\tstep " << n.step_index << '\t' << n.unit_id;
    if (!n.token.empty()) std::cout << '\t' << n.token;
    if (n.entity_id) std::cout << "\t[" << *n.entity_id << ']';
    std::cout << '\n';
  }
  auto grid = [&](const char* name, const CodeGrid& c) {
    std::cout << '\n' << name << '\n';
    for (std::size_t i = 0; i < g.size(); ++i) {
      for (std::size_t j = 0; j < g.size(); ++j) std::cout << (c.at(i, j) ? char('0' + c.at(i, j)) : '.');
      std::cout << '\n';
    }
  };
  grid("phi_t", g.phi_t);
  grid("phi_m", g.phi_m);
}
