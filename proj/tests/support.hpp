#pragma once

// Pretrained models shared across test binaries. Pretraining is deterministic,
// so a checkpoint cached in the build tree is identical to a fresh run.

#include <cstdint>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "anchorlab/concepts.hpp"
#include "anchorlab/personalize.hpp"

#ifndef ANCHORLAB_TEST_CACHE
#define ANCHORLAB_TEST_CACHE "."
#endif

namespace anchorlab::testkit {

inline std::uint64_t world_fingerprint(const World& w) {
  ParamTensor t;
  for (const auto& mix : w.classes) {
    for (const auto& c : mix.components) {
      t.values.push_back(c.weight);
      t.values.insert(t.values.end(), c.mean.data(), c.mean.data() + c.mean.size());
      t.values.insert(t.values.end(), c.cov.data(), c.cov.data() + c.cov.size());
    }
  }
  for (const auto& c : w.contexts) t.values.insert(t.values.end(), c.A.data(), c.A.data() + c.A.size());
  const Matrix refs = w.reference_matrix();
  t.values.insert(t.values.end(), refs.data.begin(), refs.data.end());
  const ParamTensor* ps[] = {&t};
  return checksum(ps);
}

inline DenoiserModel cached_pretrain(const std::string& name, const World& world, const Schedule& sched,
                                     const PretrainOptions& options) {
  const std::filesystem::path dir(ANCHORLAB_TEST_CACHE);
  const std::string stem = name + "_" + std::to_string(world_fingerprint(world)) + "_" +
                           std::to_string(options.steps) + "_" + std::to_string(options.seed);
  const auto path = dir / (stem + ".ckpt");
  if (std::filesystem::exists(path)) {
    DenoiserModel m = DenoiserModel::load(path);
    if (m.config() == denoiser_config_for(world, sched)) return m;
  }
  DenoiserModel m = pretrain(world, sched, options).model;
  std::filesystem::create_directories(dir);
  const auto tmp = dir / (stem + ".ckpt." + std::to_string(::getpid()));
  m.save(tmp);
  std::filesystem::rename(tmp, path);
  return m;
}

// Default world, T = 200 cosine, default pretraining.
struct DefaultSetup {
  World world;
  Schedule sched;
  DenoiserModel model;
};

inline const DefaultSetup& default_setup() {
  static const DefaultSetup s = [] {
    DefaultSetup d;
    d.world = build_world({});
    d.sched = make_schedule(200, ScheduleKind::cosine);
    d.model = cached_pretrain("default_world0", d.world, d.sched, PretrainOptions{});
    return d;
  }();
  return s;
}

// Short pretraining for tests that only need a trained, finite model.
inline const DefaultSetup& quick_setup() {
  static const DefaultSetup s = [] {
    DefaultSetup d;
    d.world = build_world({});
    d.sched = make_schedule(200, ScheduleKind::cosine);
    PretrainOptions o;
    o.steps = 400;
    o.batch = 32;
    o.ceiling_window = 50;
    d.model = pretrain(d.world, d.sched, o).model;
    return d;
  }();
  return s;
}

}  // namespace anchorlab::testkit
