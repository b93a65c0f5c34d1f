#pragma once

#include <string>

namespace mixalign::testing {

// A three-domain experiment small enough to train in well under a second.
inline std::string SmallConfigText() {
  return R"({
  "output_dir": "out",
  "seed": 5,
  "corpus": {
    "seed": 9,
    "train_bytes": 6000,
    "eval": {"texts_per_domain": 4, "chunk_bytes": 16},
    "domains": [
      {"name": "a", "order": 1, "transition_seed": 1, "alphabet_size": 8, "skew": 0.3},
      {"name": "b", "order": 1, "transition_seed": 2, "alphabet_size": 8, "skew": 0.3},
      {"name": "c", "order": 2, "transition_seed": 3, "alphabet_size": 8, "skew": 0.5}
    ]
  },
  "model": {"vocab": 8, "layers": 1, "heads": 2, "embed_dim": 8, "context_length": 16},
  "training": {
    "total_steps": 40,
    "batch_windows": 2,
    "window_length": 16,
    "warmup_steps": 4,
    "lr_max": 0.003,
    "lr_min": 0.0003,
    "checkpoint_every": 10
  },
  "schedule": {"dense_until": 8, "every": 10},
  "target": {"boost": {"a": 3.0}},
  "methods": [
    {"name": "uniform"},
    {"name": "aggregated_lld", "tau": "spread:1"},
    {"run_id": "agg_inf", "name": "aggregated_lld", "tau": "inf"},
    {"name": "distill_kl"}
  ]
})";
}

}  // namespace mixalign::testing
