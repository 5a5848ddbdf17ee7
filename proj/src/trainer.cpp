#include "fss/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "fss/error.hpp"

namespace fss {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

TrainConfig default_config(Task task) {
  TrainConfig c;
  c.task = task;
  if (task == Task::i2s) {
    c.stage1_weights = {25.0, 25.0, 12.5, 0.0};
    c.stage2_weights = {100.0, 100.0, 50.0, 100.0};
    c.lr_generator = 2e-4;
    c.lr_discriminator = 1e-5;
    c.epochs = 50;
    c.freeze_stage1_after = std::nullopt;
    c.ablation = {true, true};
  } else {
    c.stage1_weights = {50.0, 50.0, 0.2, 0.0};
    c.stage2_weights = {100.0, 100.0, 0.2, 0.0};
    c.lr_generator = 2e-4;
    c.lr_discriminator = 2e-4;
    c.epochs = 400;
    c.freeze_stage1_after = 250;
    c.ablation = {true, false};
  }
  return c;
}

void TrainConfig::validate() const {
  stage1_weights.validate();
  stage2_weights.validate();
  if (!(lr_generator > 0.0) || !(lr_discriminator > 0.0)) throw ConfigError("learning rates must be positive");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  if (freeze_stage1_after && (*freeze_stage1_after < 0 || *freeze_stage1_after >= epochs)) {
    throw ConfigError("freeze_stage1_after must lie in [0, epochs)");
  }
  if (task == Task::s2i && stage2_weights.lambda_sty != 0.0) {
    throw ConfigError("style classification weight must be 0 for s2i");
  }
  if (stage1_weights.lambda_sty != 0.0) throw ConfigError("stage 1 has no style classification term");
  regions.validate();
  const int deepest = std::max({network.rest_depth, network.global_depth + 1, network.local_depth});
  if (resolution <= 0 || resolution % (1 << deepest) != 0) {
    throw ConfigError("resolution must be a positive multiple of " + std::to_string(1 << deepest));
  }
  const auto scaled = regions.for_resolution(resolution);
  for (Part p : kKeyParts) {
    const auto w = scaled.window(p);
    const int div = 1 << network.component_depth;
    if (w.width % div != 0 || w.height % div != 0 || w.width > resolution || w.height > resolution) {
      throw ConfigError("scaled " + to_string(p) + " window does not fit the component generator");
    }
  }
}

json config_to_json(const TrainConfig& c) {
  json windows = json::array();
  for (const auto& w : c.regions.windows) windows.push_back({w.width, w.height});
  json j{{"version", kConfigVersion},
         {"task", to_string(c.task)},
         {"stage1_weights", c.stage1_weights},
         {"stage2_weights", c.stage2_weights},
         {"lr_generator", c.lr_generator},
         {"lr_discriminator", c.lr_discriminator},
         {"epochs", c.epochs},
         {"freeze_stage1_after", c.freeze_stage1_after ? json(*c.freeze_stage1_after) : json(nullptr)},
         {"batch_size", c.batch_size},
         {"seed", c.seed},
         {"ablation", {{"use_multi_patch", c.ablation.use_multi_patch}, {"use_style_vector", c.ablation.use_style_vector}}},
         {"resolution", c.resolution},
         {"checkpoint_every", c.checkpoint_every},
         {"network", c.network},
         {"region_windows", windows},
         {"region_base_resolution", c.regions.base_resolution},
         {"extractor_weights", c.extractor_weights}};
  return j;
}

TrainConfig config_from_json(const json& j, TrainConfig c) {
  try {
    if (j.contains("version") && j["version"].get<int>() > kConfigVersion) {
      throw ConfigError("config version " + std::to_string(j["version"].get<int>()) + " is newer than supported");
    }
    if (j.contains("task")) c.task = parse_task(j["task"].get<std::string>());
    if (j.contains("stage1_weights")) c.stage1_weights = j["stage1_weights"].get<LossWeights>();
    if (j.contains("stage2_weights")) c.stage2_weights = j["stage2_weights"].get<LossWeights>();
    c.lr_generator = j.value("lr_generator", c.lr_generator);
    c.lr_discriminator = j.value("lr_discriminator", c.lr_discriminator);
    c.epochs = j.value("epochs", c.epochs);
    if (j.contains("freeze_stage1_after")) {
      c.freeze_stage1_after = j["freeze_stage1_after"].is_null()
                                  ? std::nullopt
                                  : std::optional<int>(j["freeze_stage1_after"].get<int>());
    }
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    if (j.contains("ablation")) {
      c.ablation.use_multi_patch = j["ablation"].value("use_multi_patch", c.ablation.use_multi_patch);
      c.ablation.use_style_vector = j["ablation"].value("use_style_vector", c.ablation.use_style_vector);
    }
    c.resolution = j.value("resolution", c.resolution);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    if (j.contains("network")) {
      json merged = c.network;
      merged.update(j["network"]);
      c.network = merged.get<NetworkConfig>();
    }
    if (j.contains("region_windows")) {
      const auto& w = j["region_windows"];
      if (!w.is_array() || w.size() != 4) throw ConfigError("region_windows must list four [w, h] pairs");
      for (std::size_t i = 0; i < 4; ++i) c.regions.windows[i] = cv::Size(w[i][0].get<int>(), w[i][1].get<int>());
    }
    c.regions.base_resolution = j.value("region_base_resolution", c.regions.base_resolution);
    c.extractor_weights = j.value("extractor_weights", c.extractor_weights);
  } catch (const json::exception& err) {
    throw ConfigError(std::string("malformed config: ") + err.what());
  }
  return c;
}

TrainConfig load_config(const fs::path& file, TrainConfig base) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& err) {
    throw ConfigError("config " + file.string() + ": " + err.what());
  }
  return config_from_json(j, std::move(base));
}

void save_config(const TrainConfig& config, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw Error("cannot write config " + file.string());
  out << config_to_json(config).dump(2) << '\n';
}

std::string config_hash(const TrainConfig& config) {
  const std::string text = config_to_json(config).dump();
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

FsganModelImpl::FsganModelImpl(const TrainConfig& cfg) : config(cfg) {
  config.validate();
  scaled_regions = config.regions.for_resolution(config.resolution);
  const auto& net = config.network;
  const int in_ch = input_channels(config.task);
  const int out_ch = output_channels(config.task);

  part_generators = register_module("part_generators", torch::nn::ModuleList());
  part_discriminators = register_module("part_discriminators", torch::nn::ModuleList());
  if (config.ablation.use_multi_patch) {
    for (std::size_t p = 0; p < kPartCount; ++p) {
      const int depth = static_cast<Part>(p) == Part::rest ? net.rest_depth : net.component_depth;
      part_generators->push_back(EncoderDecoderGenerator(in_ch, out_ch, depth, net));
      part_discriminators->push_back(PatchDiscriminator(in_ch + out_ch, net.discriminator_width));
    }
  }
  const int refine_in = config.ablation.use_multi_patch ? out_ch : in_ch;
  refiner = register_module("refiner", CoarseToFineGenerator(refine_in, out_ch, config.style_enabled(), net));
  discriminator = register_module(
      "discriminator", MultiScaleDiscriminator(in_ch + out_ch, net.discriminator_width, net.discriminator_scales));
  if (config.style_enabled()) {
    style_classifier = register_module("style_classifier", StyleClassifier(out_ch, net.classifier_width));
  }
  extractor = register_module("extractor", PerceptualExtractor(net));
  if (!config.extractor_weights.empty()) extractor->load_weights(config.extractor_weights);
}

torch::Tensor FsganModelImpl::synthesize_intact(const torch::Tensor& input, const FaceRegions& regions) {
  if (part_generators->size() == 0) throw ConfigError("multi-patch stage is disabled");
  auto parts = split_parts(input, regions, scaled_regions, tensor_mask_value(scaled_regions));
  TensorParts fake;
  for (std::size_t p = 0; p < kPartCount; ++p) {
    fake.items[p] = (*part_generators)[p]->as<EncoderDecoderGenerator>()->forward(parts.items[p]);
  }
  return stitch_parts(fake, regions, scaled_regions);
}

torch::Tensor FsganModelImpl::refine(const torch::Tensor& stage2_input, const std::optional<torch::Tensor>& labels) {
  if (config.style_enabled() != labels.has_value()) {
    throw ConfigError(config.style_enabled() ? "style label required for this model"
                                             : "style label given to a model without style conditioning");
  }
  std::optional<torch::Tensor> style;
  if (labels) {
    style = expand_style(*labels, stage2_input.size(2), stage2_input.size(3), stage2_input.options());
  }
  return refiner->forward(stage2_input, style);
}

torch::Tensor FsganModelImpl::translate(const torch::Tensor& input, const FaceRegions& regions,
                                        const std::optional<int>& style_label) {
  auto stage2_in = config.ablation.use_multi_patch ? synthesize_intact(input, regions) : input;
  std::optional<torch::Tensor> labels;
  if (style_label) labels = torch::full({input.size(0)}, *style_label, torch::kLong);
  return refine(stage2_in, labels);
}

namespace {

std::vector<torch::Tensor> params_of(const torch::nn::Module& m) { return m.parameters(); }

void append(std::vector<torch::Tensor>& dst, const std::vector<torch::Tensor>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

}  // namespace

std::vector<torch::Tensor> FsganModelImpl::stage1_generator_parameters() { return params_of(*part_generators); }
std::vector<torch::Tensor> FsganModelImpl::stage1_discriminator_parameters() {
  return params_of(*part_discriminators);
}

std::vector<torch::Tensor> FsganModelImpl::stage2_discriminator_parameters() {
  auto params = params_of(*discriminator);
  if (style_classifier) append(params, params_of(*style_classifier));
  return params;
}

std::uint64_t FsganModelImpl::stage1_hash() const {
  std::uint64_t h = parameter_hash(*part_generators);
  return h ^ (parameter_hash(*part_discriminators) * 1099511628211ULL);
}

// ---------------------------------------------------------------------------
// Samples and loss records
// ---------------------------------------------------------------------------

TrainingSample make_sample(const PhotoSketchPair& pair, Task task, const std::optional<FaceRegions>& photo_regions) {
  TrainingSample s;
  s.pair_id = pair.pair_id;
  const auto photo = image_to_tensor(pair.photo).unsqueeze(0);
  const auto sketch = image_to_tensor(pair.sketch).unsqueeze(0);
  s.input = task == Task::i2s ? photo : sketch;
  s.target = task == Task::i2s ? sketch : photo;
  s.style = static_cast<int>(pair.style);
  if (photo_regions) {
    s.regions = pair.transform ? map_regions(*photo_regions, *pair.transform) : *photo_regions;
  }
  return s;
}

std::string loss_csv_header() { return "step,epoch,stage1_g,stage1_d,stage2_g,stage2_d,adv,fm,l1,per,sty"; }

std::string loss_csv_row(const LossRecord& r) {
  std::ostringstream os;
  os << std::setprecision(9) << r.step << ',' << r.epoch << ',' << r.stage1_g << ',' << r.stage1_d << ','
     << r.stage2_g << ',' << r.stage2_d << ',' << r.adv << ',' << r.fm << ',' << r.l1 << ',' << r.per << ','
     << r.sty;
  return os.str();
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

std::unique_ptr<torch::optim::Adam> make_adam(const std::vector<torch::Tensor>& params, double lr) {
  // An optimizer over no parameters is kept as a placeholder so checkpoints have a fixed layout.
  return std::make_unique<torch::optim::Adam>(params, torch::optim::AdamOptions(lr));
}

double finite_or_abort(const torch::Tensor& t, const char* name, std::int64_t step) {
  const double v = t.item<double>();
  if (!std::isfinite(v)) {
    throw TrainingAborted(std::string("non-finite ") + name + " loss at step " + std::to_string(step));
  }
  return v;
}

torch::Tensor sum_or_zero(const torch::Tensor& acc, const torch::Tensor& term) {
  return acc.defined() ? acc + term : term;
}

std::vector<DiscriminatorOutput> detached(std::vector<DiscriminatorOutput> outs) {
  for (auto& o : outs) {
    o.probability = o.probability.detach();
    for (auto& t : o.taps) t = t.detach();
  }
  return outs;
}

/// Updates the five part GANs and returns the detached stitched images (one per sample).
torch::Tensor stage1_update(TrainState& state, const std::vector<TrainingSample>& batch, LossRecord& record) {
  auto& m = *state.model;
  const bool frozen = state.config.stage1_frozen(state.epoch);
  const auto& w = state.config.stage1_weights;
  const double mask_in = tensor_mask_value(m.scaled_regions);

  std::vector<torch::Tensor> intact;
  if (frozen) {
    torch::NoGradGuard no_grad;
    for (const auto& s : batch) intact.push_back(m.synthesize_intact(s.input, *s.regions));
    return torch::cat(intact, 0);
  }

  torch::Tensor g_total;
  torch::Tensor d_total;
  struct PartBatch {
    torch::Tensor in, target, fake;
  };
  std::vector<std::array<PartBatch, kPartCount>> per_sample;
  for (const auto& s : batch) {
    auto in_parts = split_parts(s.input, *s.regions, m.scaled_regions, mask_in);
    auto tgt_parts = split_parts(s.target, *s.regions, m.scaled_regions, mask_in);
    std::array<PartBatch, kPartCount> pb;
    TensorParts fakes;
    for (std::size_t p = 0; p < kPartCount; ++p) {
      auto gen = (*m.part_generators)[p]->as<EncoderDecoderGenerator>();
      auto disc = (*m.part_discriminators)[p]->as<PatchDiscriminator>();
      pb[p] = {in_parts.items[p], tgt_parts.items[p], gen->forward(in_parts.items[p])};
      fakes.items[p] = pb[p].fake.detach();

      auto real_out = disc->forward(pb[p].in, pb[p].target);
      auto fake_out = disc->forward(pb[p].in, pb[p].fake);
      LossComponents<torch::Tensor> c;
      c.adv = generator_adversarial(fake_out.probability);
      std::vector<torch::Tensor> real_taps;
      for (const auto& t : real_out.taps) real_taps.push_back(t.detach());
      c.fm = feature_matching_loss(real_taps, fake_out.taps);
      c.l1 = pixelwise_l1(pb[p].target, pb[p].fake);
      c.per = w.lambda_per != 0.0 ? perceptual_loss(m.extractor, pb[p].target, pb[p].fake) : torch::zeros({});
      g_total = sum_or_zero(g_total, generator_total_loss(c, w));
    }
    intact.push_back(stitch_parts(fakes, *s.regions, m.scaled_regions));
    per_sample.push_back(std::move(pb));
  }
  g_total = g_total / static_cast<double>(batch.size());
  record.stage1_g = finite_or_abort(g_total, "stage-1 generator", state.step);
  state.stage1_g_opt->zero_grad();
  g_total.backward();
  state.stage1_g_opt->step();

  for (const auto& pb : per_sample) {
    for (std::size_t p = 0; p < kPartCount; ++p) {
      auto disc = (*m.part_discriminators)[p]->as<PatchDiscriminator>();
      auto real_out = disc->forward(pb[p].in, pb[p].target);
      auto fake_out = disc->forward(pb[p].in, pb[p].fake.detach());
      d_total = sum_or_zero(d_total, discriminator_adversarial(real_out.probability, fake_out.probability));
    }
  }
  d_total = d_total / static_cast<double>(batch.size());
  record.stage1_d = finite_or_abort(d_total, "stage-1 discriminator", state.step);
  state.stage1_d_opt->zero_grad();
  d_total.backward();
  state.stage1_d_opt->step();
  return torch::cat(intact, 0);
}

void stage2_update(TrainState& state, const torch::Tensor& stage2_in, const torch::Tensor& input,
                   const torch::Tensor& target, const torch::Tensor& labels, LossRecord& record) {
  auto& m = *state.model;
  const bool style = state.config.style_enabled();
  auto objective = stage2_generator_objective(m, state.config, stage2_in, input, target, labels);
  const auto& c = objective.parts;
  const auto& fake = objective.fake;
  auto& g_total = objective.total;
  record.stage2_g = finite_or_abort(g_total, "stage-2 generator", state.step);
  record.adv = c.adv.item<double>();
  record.fm = c.fm.item<double>();
  record.l1 = c.l1.item<double>();
  record.per = c.per.item<double>();
  record.sty = c.sty.item<double>();
  state.stage2_g_opt->zero_grad();
  g_total.backward();
  state.stage2_g_opt->step();

  // Discriminator (and style classifier on real references) update.
  auto real_d = m.discriminator->forward(input, target);
  auto fake_d = m.discriminator->forward(input, fake.detach());
  std::vector<torch::Tensor> per_scale;
  for (std::size_t k = 0; k < real_d.size(); ++k) {
    per_scale.push_back(discriminator_adversarial(real_d[k].probability, fake_d[k].probability));
  }
  auto d_total = discriminator_total_loss(per_scale);
  if (style) d_total = d_total + style_classification_loss_from_logits(m.style_classifier->forward(target), labels);
  record.stage2_d = finite_or_abort(d_total, "stage-2 discriminator", state.step);
  state.stage2_d_opt->zero_grad();
  d_total.backward();
  state.stage2_d_opt->step();
}

}  // namespace

GeneratorObjective stage2_generator_objective(FsganModelImpl& m, const TrainConfig& config,
                                              const torch::Tensor& stage2_in, const torch::Tensor& input,
                                              const torch::Tensor& target, const torch::Tensor& labels) {
  const auto& w = config.stage2_weights;
  const bool style = config.style_enabled();
  GeneratorObjective out;
  out.fake = m.refine(stage2_in, style ? std::optional<torch::Tensor>(labels) : std::nullopt);
  const auto& fake = out.fake;

  // Real-pair taps enter feature matching as constants.
  auto real_out = m.discriminator->forward(input, target);
  auto fake_out = m.discriminator->forward(input, fake);
  auto& c = out.parts;
  for (const auto& o : fake_out) c.adv = sum_or_zero(c.adv, generator_adversarial(o.probability));
  c.fm = feature_matching_loss(detached(real_out), fake_out);
  c.l1 = pixelwise_l1(target, fake);
  c.per = w.lambda_per != 0.0 ? perceptual_loss(m.extractor, target, fake) : torch::zeros({}, fake.options());
  c.sty = style ? style_classification_loss_from_logits(m.style_classifier->forward(fake), labels)
                : torch::zeros({}, fake.options());
  out.total = generator_total_loss(c, w);
  return out;
}

TrainState::TrainState(const TrainConfig& cfg) : config(cfg) {
  config.validate();
  torch::manual_seed(config.seed);
  model = FsganModel(config);
  stage1_g_opt = make_adam(model->stage1_generator_parameters(), config.lr_generator);
  stage1_d_opt = make_adam(model->stage1_discriminator_parameters(), config.lr_discriminator);
  stage2_g_opt = make_adam(model->refiner->parameters(), config.lr_generator);
  stage2_d_opt = make_adam(model->stage2_discriminator_parameters(), config.lr_discriminator);
}

LossRecord train_step(TrainState& state, const std::vector<TrainingSample>& batch) {
  if (batch.empty()) throw DataError("train_step: empty batch");
  LossRecord record;
  record.step = state.step + 1;
  record.epoch = state.epoch;
  state.model->train();

  std::vector<torch::Tensor> inputs;
  std::vector<torch::Tensor> targets;
  std::vector<std::int64_t> labels;
  for (const auto& s : batch) {
    if (state.config.ablation.use_multi_patch && !s.regions) {
      throw DataError("pair '" + s.pair_id + "' has no face regions");
    }
    inputs.push_back(s.input);
    targets.push_back(s.target);
    labels.push_back(s.style);
  }
  const auto input = torch::cat(inputs, 0);
  const auto target = torch::cat(targets, 0);
  const auto label_tensor = torch::tensor(labels, torch::kLong);

  torch::Tensor stage2_in = input;
  if (state.config.ablation.use_multi_patch) stage2_in = stage1_update(state, batch, record);
  stage2_update(state, stage2_in.detach(), input, target, label_tensor, record);
  ++state.step;
  return record;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const TrainState& state, const fs::path& file) {
  torch::serialize::OutputArchive archive;
  archive.write("format", c10::IValue(std::string("fss-checkpoint")));
  archive.write("format_version", c10::IValue(static_cast<std::int64_t>(kCheckpointFormatVersion)));
  archive.write("config", c10::IValue(config_to_json(state.config).dump()));
  archive.write("config_hash", c10::IValue(config_hash(state.config)));
  archive.write("epoch", c10::IValue(static_cast<std::int64_t>(state.epoch)));
  archive.write("step", c10::IValue(state.step));

  torch::serialize::OutputArchive model_archive;
  state.model->save(model_archive);
  archive.write("model", model_archive);
  const std::pair<const char*, torch::optim::Adam*> opts[] = {{"opt_stage1_g", state.stage1_g_opt.get()},
                                                               {"opt_stage1_d", state.stage1_d_opt.get()},
                                                               {"opt_stage2_g", state.stage2_g_opt.get()},
                                                               {"opt_stage2_d", state.stage2_d_opt.get()}};
  for (const auto& [key, opt] : opts) {
    torch::serialize::OutputArchive sub;
    opt->save(sub);
    archive.write(key, sub);
  }
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  const fs::path tmp = file.string() + ".tmp";
  archive.save_to(tmp.string());
  fs::rename(tmp, file);
}

std::unique_ptr<TrainState> load_checkpoint(const fs::path& file) {
  if (!fs::is_regular_file(file)) throw DataError("checkpoint " + file.string() + " not found");
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(file.string());
  } catch (const c10::Error& err) {
    throw DataError("cannot read checkpoint " + file.string() + ": " + err.what_without_backtrace());
  }
  c10::IValue value;
  if (!archive.try_read("format", value) || !value.isString() || value.toStringRef() != "fss-checkpoint") {
    throw DataError(file.string() + " is not a checkpoint archive");
  }
  archive.read("format_version", value);
  if (value.toInt() > kCheckpointFormatVersion) {
    throw DataError("checkpoint format version " + std::to_string(value.toInt()) + " is newer than supported");
  }
  archive.read("config", value);
  const TrainConfig config = config_from_json(json::parse(value.toStringRef()), TrainConfig{});
  auto state = std::make_unique<TrainState>(config);
  archive.read("epoch", value);
  state->epoch = static_cast<int>(value.toInt());
  archive.read("step", value);
  state->step = value.toInt();

  torch::serialize::InputArchive model_archive;
  archive.read("model", model_archive);
  state->model->load(model_archive);
  const std::pair<const char*, torch::optim::Adam*> opts[] = {{"opt_stage1_g", state->stage1_g_opt.get()},
                                                               {"opt_stage1_d", state->stage1_d_opt.get()},
                                                               {"opt_stage2_g", state->stage2_g_opt.get()},
                                                               {"opt_stage2_d", state->stage2_d_opt.get()}};
  for (const auto& [key, opt] : opts) {
    torch::serialize::InputArchive sub;
    archive.read(key, sub);
    opt->load(sub);
  }
  // Extractor weights never train; keep them frozen after the bulk load.
  for (auto& p : state->model->extractor->parameters()) p.set_requires_grad(false);
  return state;
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

namespace {

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epoch + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

fs::path epoch_checkpoint(const fs::path& dir, int epoch) {
  std::ostringstream name;
  name << "checkpoint_epoch" << std::setw(4) << std::setfill('0') << epoch << ".pt";
  return dir / name.str();
}

/// Lazily loads samples and caches detected regions.
class SampleSource {
 public:
  SampleSource(const DatasetManifest& manifest, const TrainConfig& config, const LandmarkDetector* detector)
      : entries_(manifest.entries_in(Split::train)), config_(config), detector_(detector) {
    if (config.ablation.use_multi_patch && detector == nullptr) {
      throw ConfigError("multi-patch training needs a region detector");
    }
  }

  std::size_t size() const { return entries_.size(); }

  TrainingSample get(std::size_t index) {
    const ManifestEntry& e = *entries_.at(index);
    auto pair = load_pair(e, LoadOptions{config_.resolution});
    std::optional<FaceRegions> regions;
    if (config_.ablation.use_multi_patch) {
      auto it = regions_.find(e.pair_id);
      if (it == regions_.end()) {
        cv::Mat native = read_image(e.photo_file, 3);
        try {
          it = regions_.emplace(e.pair_id, detect_regions(native, *detector_, e.pair_id)).first;
        } catch (const DataError& err) {
          throw DataError("pair '" + e.pair_id + "': " + err.what());
        }
      }
      regions = it->second;
    }
    return make_sample(pair, config_.task, regions);
  }

 private:
  std::vector<const ManifestEntry*> entries_;
  TrainConfig config_;
  const LandmarkDetector* detector_;
  std::map<std::string, FaceRegions> regions_;
};

}  // namespace

TrainRunResult train_run(const DatasetManifest& manifest, const TrainConfig& config, const fs::path& checkpoint_dir,
                         const TrainRunOptions& options) {
  config.validate();
  fs::create_directories(checkpoint_dir);
  std::unique_ptr<TrainState> state;
  if (options.resume_from) {
    state = load_checkpoint(*options.resume_from);
    if (config_hash(state->config) != config_hash(config)) {
      throw ConfigError("checkpoint was written with a different configuration");
    }
  } else {
    state = std::make_unique<TrainState>(config);
  }

  SampleSource source(manifest, config, options.detector);
  TrainRunResult result;
  result.loss_curve = checkpoint_dir / "loss_curve.csv";
  const bool append = options.resume_from.has_value() && fs::exists(result.loss_curve);
  std::ofstream curve(result.loss_curve, append ? std::ios::app : std::ios::trunc);
  if (!curve) throw Error("cannot write " + result.loss_curve.string());
  if (!append) curve << loss_csv_header() << '\n';

  const std::size_t n = source.size();
  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  const std::int64_t steps_per_epoch = n == 0 ? 0 : static_cast<std::int64_t>((n + batch_size - 1) / batch_size);
  bool stopped = false;
  while (state->epoch < config.epochs && !stopped) {
    const auto order = seeded_permutation(n, epoch_seed(config.seed, state->epoch));
    // Resuming mid-epoch skips the batches already consumed.
    const std::int64_t done_in_epoch = state->step - static_cast<std::int64_t>(state->epoch) * steps_per_epoch;
    for (std::int64_t b = std::max<std::int64_t>(0, done_in_epoch); b < steps_per_epoch; ++b) {
      if (options.max_steps && state->step >= *options.max_steps) {
        stopped = true;
        break;
      }
      std::vector<TrainingSample> batch;
      for (std::size_t i = b * batch_size; i < std::min(n, (b + 1) * batch_size); ++i) {
        batch.push_back(source.get(order[i]));
      }
      LossRecord record = train_step(*state, batch);
      curve << loss_csv_row(record) << '\n';
      result.records.push_back(record);
    }
    if (stopped) break;
    ++state->epoch;
    if (state->epoch % config.checkpoint_every == 0) save_checkpoint(*state, epoch_checkpoint(checkpoint_dir, state->epoch));
  }
  curve.flush();

  const fs::path final_file = checkpoint_dir / "checkpoint_final.pt";
  save_checkpoint(*state, final_file);
  result.final_checkpoint = {final_file, state->epoch, state->step, config_hash(state->config)};
  return result;
}

double evaluate_l1(FsganModel& model, const std::vector<TrainingSample>& samples) {
  if (samples.empty()) throw DataError("evaluate_l1: no samples");
  torch::NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& s : samples) {
    std::optional<int> style;
    if (model->config.style_enabled()) style = s.style;
    FaceRegions regions = s.regions.value_or(FaceRegions{});
    auto out = model->translate(s.input, regions, style);
    total += pixelwise_l1(s.target, out).item<double>();
  }
  return total / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

Translator::Translator(const fs::path& checkpoint) : model_(load_checkpoint(checkpoint)->model) {}

Translator::Translator(FsganModel model) : model_(std::move(model)) {}

cv::Mat Translator::infer(const cv::Mat& input, Task task, const std::optional<int>& style,
                          const std::optional<FaceRegions>& regions) const {
  const auto& cfg = model_->config;
  if (task != cfg.task) throw ConfigError("checkpoint was trained for " + to_string(cfg.task) + ", not " + to_string(task));
  if (style && !cfg.style_enabled()) throw ConfigError("style given to a model without style conditioning");
  if (!style && cfg.style_enabled()) throw ConfigError("this model requires a style label (1, 2 or 3)");
  if (style && (*style < 1 || *style > 3)) throw ConfigError("style label must be 1, 2 or 3");
  if (input.empty() || input.channels() != input_channels(task)) {
    throw ShapeError("input image must have " + std::to_string(input_channels(task)) + " channel(s)");
  }
  if (cfg.ablation.use_multi_patch && !regions) throw DetectionError("multi-patch model needs face regions");

  Letterbox lb;
  const unsigned char pad = task == Task::i2s ? 0 : 255;
  cv::Mat boxed = letterbox(input, cfg.resolution, pad, &lb);
  FaceRegions mapped;
  if (regions) mapped = map_regions(*regions, lb);

  torch::NoGradGuard no_grad;
  model_->train();  // normalization uses per-sample statistics either way
  auto out = model_->translate(image_to_tensor(boxed).unsqueeze(0), mapped, style);
  cv::Mat full = tensor_to_image(out);
  const int w = std::clamp(static_cast<int>(std::lround(input.cols * lb.scale)), 1, cfg.resolution);
  const int h = std::clamp(static_cast<int>(std::lround(input.rows * lb.scale)), 1, cfg.resolution);
  cv::Mat cropped = full(cv::Rect(lb.offset_x, lb.offset_y, w, h));
  cv::Mat result;
  cv::resize(cropped, result, input.size(), 0, 0, cv::INTER_LINEAR);
  return result;
}

}  // namespace fss
