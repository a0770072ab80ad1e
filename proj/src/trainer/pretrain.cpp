// SPDX-License-Identifier: Apache-2.0
#include "avssl/trainer/pretrain.hpp"

#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "avssl/core/error.hpp"
#include "avssl/core/log.hpp"
#include "avssl/trainer/checkpoint.hpp"
#include "avssl/trainer/views.hpp"
#include "json.hpp"

namespace avssl::trainer {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {
constexpr std::uint64_t kOrderStream = 0x6f72646572ULL;
constexpr std::uint64_t kStepStream = 0x73746570ULL;

ordered_json opt(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

// Large activations are allocated and freed every step; keeping them off
// mmap and out of trim avoids page-fault churn.
void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

void trim_metrics(const fs::path& path, std::size_t keep_through_step) {
  std::vector<std::string> kept;
  {
    std::ifstream is(path);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      try {
        if (ordered_json::parse(line).at("step").get<std::size_t>() <= keep_through_step) kept.push_back(line);
      } catch (const nlohmann::json::exception&) {
        throw IoError(path.string() + ": unreadable metrics line while resuming");
      }
    }
  }
  std::ofstream os(path, std::ios::trunc);
  for (const auto& l : kept) os << l << '\n';
  if (!os) throw IoError("cannot rewrite " + path.string());
}

}  // namespace

EpochPlan EpochPlan::from(const data::RunConfig& cfg, std::size_t train_clips) {
  EpochPlan p;
  p.views = cfg.optim.epoch_size ? cfg.optim.epoch_size : train_clips;
  if (p.views < 2) throw ConfigError("an epoch needs at least 2 views");
  p.steps_per_epoch = std::max<std::size_t>(1, p.views / cfg.optim.batch_size);
  p.total_steps = p.steps_per_epoch * cfg.optim.epochs;
  return p;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t train_clips,
                                     std::size_t views) {
  if (train_clips == 0) throw ConfigError("train split is empty");
  std::vector<std::size_t> order;
  order.reserve(views + train_clips);
  for (std::uint64_t pass = 0; order.size() < views; ++pass) {
    std::vector<std::size_t> idx(train_clips);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng = Rng::derive(seed, {kOrderStream, epoch, pass});
    rng.shuffle(idx);
    order.insert(order.end(), idx.begin(), idx.end());
  }
  order.resize(views);
  return order;
}

std::string to_json_line(const StepRecord& r) {
  ordered_json j;
  j["kind"] = "step";
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["lr_encoder"] = r.lr_encoder;
  j["lr_predictor"] = r.lr_predictor;
  j["batch"] = r.batch;
  j["skipped"] = r.skipped;
  for (std::size_t i = 0; i < objective::kPairCount; ++i) {
    const auto key = "L_" + std::string(objective::to_string(static_cast<objective::Pair>(i)));
    j[key] = r.loss ? opt(r.loss->pairs[i]) : ordered_json(nullptr);
  }
  j["L_intra"] = r.loss ? opt(r.loss->intra) : ordered_json(nullptr);
  j["L_sync"] = r.loss ? opt(r.loss->sync) : ordered_json(nullptr);
  j["L_async"] = r.loss ? opt(r.loss->async) : ordered_json(nullptr);
  j["L_total"] = r.loss ? ordered_json(r.loss->total) : ordered_json(nullptr);
  return j.dump();
}

std::string to_json_line(const EpochRecord& r) {
  ordered_json j;
  j["kind"] = "epoch";
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["L_total_mean"] = r.mean_total;
  j["collapse_video"] = r.collapse_video;
  j["collapse_audio"] = r.collapse_audio;
  j["collapse_reference"] = r.collapse_reference;
  j["skipped"] = r.skipped;
  return j.dump();
}

PretrainResult pretrain(const data::RunConfig& cfg, const data::DatasetManifest& manifest,
                        const PretrainOptions& options) {
  data::require_valid(cfg);
  const auto train = manifest.split(data::Split::train);
  if (train.empty()) throw ConfigError("train split is empty");
  const EpochPlan plan = EpochPlan::from(cfg, train.size());
  const SchedulePlan sched = SchedulePlan::from(cfg.optim, plan.total_steps);
  if (const auto v = validate(sched); !v.empty()) throw ConfigError("invalid schedule: " + v.front());
  tune_allocator();

  fs::create_directories(options.out_dir);
  PretrainResult result;
  result.metrics = options.out_dir / kMetricsFile;
  result.checkpoint = options.out_dir / kFinalCheckpoint;
  result.total_steps = plan.total_steps;

  std::unique_ptr<model::Network<float>> net;
  TrainState state;
  Rng stream = Rng::derive(cfg.seed, {kStepStream});
  if (options.resume) {
    auto ck = load_checkpoint(*options.resume);
    if (ck.config_hash != config_hash(cfg)) {
      log_warning("checkpoint " + options.resume->string() + " was written with a different config (hash " +
                  ck.config_hash + ", current " + config_hash(cfg) + ")");
    }
    net = std::move(ck.network);
    state = std::move(ck.state);
    stream.set_state(state.rng_state);
    if (fs::exists(result.metrics)) trim_metrics(result.metrics, state.step);
  } else {
    net = std::make_unique<model::Network<float>>(cfg.model, cfg.seed);
    state.optim = OptimizerState<float>::zeros(net->store(), AdamHyper::from(cfg.optim));
    std::ofstream(result.metrics, std::ios::trunc);
  }
  {
    std::ofstream os(options.out_dir / kConfigFile, std::ios::trunc);
    os << data::to_json(cfg) << '\n';
    if (!os) throw IoError("cannot write " + (options.out_dir / kConfigFile).string());
  }
  std::ofstream metrics(result.metrics, std::ios::app);
  if (!metrics) throw IoError("cannot write " + result.metrics.string());
  result.artifacts = {options.out_dir / kConfigFile, result.metrics};

  auto save_state = [&](const fs::path& path) {
    state.rng_state = stream.state();
    save_checkpoint(path, cfg, *net, state);
  };

  const double reference = 1.0 / std::sqrt(static_cast<double>(cfg.model.projector_dim));
  std::vector<std::size_t> order;
  std::size_t order_epoch = static_cast<std::size_t>(-1);
  auto& store = net->store();

  for (std::size_t s = state.step; s < plan.total_steps; ++s) {
    if (options.stop_after_steps && s >= options.stop_after_steps) break;
    const std::size_t epoch = s / plan.steps_per_epoch;
    const std::size_t j = s % plan.steps_per_epoch;
    if (order_epoch != epoch) {
      order = epoch_order(cfg.seed, epoch, train.size(), plan.views);
      order_epoch = epoch;
    }
    const std::size_t lo = j * cfg.optim.batch_size;
    const std::size_t hi = j + 1 == plan.steps_per_epoch ? plan.views : std::min(plan.views, lo + cfg.optim.batch_size);
    std::vector<const data::ManifestEntry*> clips;
    for (std::size_t k = lo; k < hi; ++k) clips.push_back(train[order[k]]);

    const Rng before = stream;
    const std::uint64_t step_seed = stream.next_u64();
    auto batch = build_view_batch(cfg, manifest, clips, step_seed);
    if (!batch.skipped.empty()) {
      log_warning("step " + std::to_string(s + 1) + ": skipped " + std::to_string(batch.skipped.size()) +
                  " clip(s) too short for the " + std::string(sampling::to_string(cfg.sampler.strategy)) +
                  " sampler (first: " + batch.skipped.front() + ")");
    }
    StepRecord rec;
    rec.step = s + 1;
    rec.epoch = epoch;
    rec.lr_encoder = sched.encoder_lr(s);
    rec.lr_predictor = sched.predictor(s);
    rec.batch = batch.size();
    rec.skipped = batch.skipped.size();
    state.epoch.skipped += batch.skipped.size();
    result.skipped += batch.skipped.size();

    if (batch.size() >= 2) {
      auto out = net->forward_views(batch.v1, batch.v2, batch.a1, batch.a2, true);
      auto graph = objective::crisscross_loss(out, cfg.loss_mask);
      const auto breakdown = graph.breakdown();
      auto fail = [&](const std::string& why) {
        stream = before;
        store.zero_grad();
        save_state(options.out_dir / kLastGoodCheckpoint);
        throw NumericError(why + " at step " + std::to_string(s + 1) + "; state before the step saved to " +
                           (options.out_dir / kLastGoodCheckpoint).string());
      };
      if (!std::isfinite(breakdown.total)) fail("non-finite loss");
      // Interior values are released by backward, so keep the projections.
      std::vector<Tensor<float>> zv, za;
      if (out.has_video()) zv = {out.zv1->value, out.zv2->value};
      if (out.has_audio()) za = {out.za1->value, out.za2->value};
      nn::backward(graph.total);
      if (cfg.optim.trust_ratio) trust_ratio_clip(store, cfg.optim.trust_coefficient);
      try {
        optimizer_step(store, state.optim, rec.lr_encoder, rec.lr_predictor);
      } catch (const NumericError& e) {
        fail(e.what());
      }
      store.zero_grad();
      for (const auto& z : zv) state.epoch.video.add(z);
      for (const auto& z : za) state.epoch.audio.add(z);
      rec.loss = breakdown;
      state.epoch.loss_sum += breakdown.total;
      state.epoch.steps += 1;
      result.final_total = breakdown.total;
    } else {
      log_warning("step " + std::to_string(s + 1) + ": fewer than 2 usable clips, no update");
    }
    state.step = s + 1;
    metrics << to_json_line(rec) << '\n';

    if (j + 1 == plan.steps_per_epoch) {
      EpochRecord er;
      er.step = s + 1;
      er.epoch = epoch;
      er.mean_total = state.epoch.steps ? state.epoch.loss_sum / static_cast<double>(state.epoch.steps) : 0.0;
      er.collapse_video = state.epoch.video.value();
      er.collapse_audio = state.epoch.audio.value();
      er.collapse_reference = reference;
      er.skipped = state.epoch.skipped;
      metrics << to_json_line(er) << '\n';
      metrics.flush();
      result.collapse_video = er.collapse_video;
      result.collapse_audio = er.collapse_audio;
      state.epoch.reset();
      if (options.log_progress) {
        log_info("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.optim.epochs) +
                 " L_total " + std::to_string(er.mean_total) + " collapse v " +
                 std::to_string(er.collapse_video) + " a " + std::to_string(er.collapse_audio));
      }
      if (cfg.checkpoint_every && (epoch + 1) % cfg.checkpoint_every == 0 && s + 1 < plan.total_steps) {
        const auto p = options.out_dir / ("checkpoint_epoch" + std::to_string(epoch + 1) + ".avck");
        save_state(p);
        result.artifacts.push_back(p);
      }
    }
  }
  metrics.flush();
  if (!metrics) throw IoError("failed writing " + result.metrics.string());

  save_state(result.checkpoint);
  result.artifacts.push_back(result.checkpoint);
  result.steps = state.step;
  result.finished = state.step >= plan.total_steps;
  return result;
}

}  // namespace avssl::trainer
