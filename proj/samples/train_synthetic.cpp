// Generates a small synthetic corpus, trains for a few epochs and prints the metrics.

#include <iostream>

#include "tmeg/tmeg.hpp"

using namespace tmeg;

int main(int argc, char** argv) {
  SyntheticConfig sc;
  sc.num_docs = 24;
  sc.steps_min = sc.steps_max = 4;
  sc.tokens_per_step_min = 6;
  sc.tokens_per_step_max = 8;
  sc.entity_vocab_size = 200;
  sc.entities_per_doc = 2;
  sc.objects_per_image_max = 3;
  sc.doc_prefix = "train";
  Datasets data;
  data.train = generate_synthetic_corpus(sc);
  sc.num_docs = 8;
  sc.doc_prefix = "valid";
  data.valid = generate_synthetic_corpus(sc);

  RunConfig rc;
  rc.model.d_model = 16;
  rc.model.n_heads = 2;
  rc.model.scorer_heads = 2;
  rc.model.max_positions = 64;
  rc.model.max_steps = 8;
  rc.model.edge_bias_lr_scale = 100;
  rc.learning_rate = 1e-3;
  rc.max_epochs = argc > 1 ? std::stoul(argv[1]) : 5;
  const TrainResult r = train(rc, data, [](const EpochRecord& e) {
    std::cerr << "epoch " << e.epoch << " loss " << e.train_loss << " valid " << e.valid_accuracy << '\n';
  });
  std::cout << metrics_to_json(r.report).dump(2) << '\n';
}
