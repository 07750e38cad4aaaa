#include "multidepth/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <mutex>
#include <ostream>
#include <random>
#include <thread>

namespace multidepth {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

// ---------------------------------------------------------------------------
// RunLog

void RunLog::write_train_csv(std::ostream& os) const {
  for (const auto& h : header) os << "# " << h << '\n';
  os << "iter,l_reg,l_cls,l_mt,w_reg,w_cls,s_reg,s_cls,alpha,skipped_batches\n";
  for (const auto& r : train)
    os << r.iter << ',' << fmt(r.l_reg) << ',' << fmt(r.l_cls) << ',' << fmt(r.l_mt) << ',' << fmt(r.w_reg) << ','
       << fmt(r.w_cls) << ',' << fmt(r.s_reg) << ',' << fmt(r.s_cls) << ',' << fmt(r.alpha) << ','
       << r.skipped_batches << '\n';
}

void RunLog::write_val_csv(std::ostream& os) const {
  for (const auto& h : header) os << "# " << h << '\n';
  os << "iter,silog_reg_scaled,silog_cls_scaled\n";
  for (const auto& r : val) os << r.iter << ',' << fmt(r.silog_reg_scaled) << ',' << fmt(r.silog_cls_scaled) << '\n';
}

double RunLog::best_silog_reg() const {
  double best = kNaN;
  for (const auto& r : val)
    if (std::isnan(best) || r.silog_reg_scaled < best) best = r.silog_reg_scaled;
  return best;
}

double RunLog::best_silog_cls() const {
  double best = kNaN;
  for (const auto& r : val)
    if (!std::isnan(r.silog_cls_scaled) && (std::isnan(best) || r.silog_cls_scaled < best)) best = r.silog_cls_scaled;
  return best;
}

double RunLog::recomposed_loss(const TrainRow& r) const {
  if (!multi_task) return r.w_reg * r.l_reg;
  const double r_reg = mode == WeightingMode::learned ? 0.5 * r.s_reg : 0.0;
  const double r_cls = mode == WeightingMode::learned ? 0.5 * r.s_cls : 0.0;
  return r.w_reg * r.l_reg + r_reg + r.w_cls * r.l_cls + r_cls;
}

// ---------------------------------------------------------------------------
// Validation

double mean_scaled_silog(std::span<const DepthMap> pred, std::span<const DepthMap> gt) {
  if (pred.size() != gt.size()) throw ShapeError("prediction and ground-truth counts differ");
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    try {
      acc += silog(pred[i], gt[i]).scaled;
      ++n;
    } catch (const EmptyReductionError&) {
    }
  }
  if (n == 0) throw EmptyReductionError("no image has jointly valid pixels");
  return acc / static_cast<double>(n);
}

ValidationResult validate(const Model& model, const Dataset& val_set, const IntervalScheme& scheme) {
  if (val_set.size() == 0) throw ConfigError("empty validation set");
  const bool both = model.config().classification_head;
  std::vector<DepthMap> gts, reg, cls;
  const std::size_t chunk = 8;
  for (std::size_t first = 0; first < val_set.size(); first += chunk) {
    const std::size_t count = std::min(chunk, val_set.size() - first);
    Batch b = frame_batch(val_set, first, count);
    for (std::size_t k = 0; k < count; ++k) gts.push_back(val_set[first + k].gt);
    for (auto& m : predict_depth(model, b.images, scheme.bounds())) reg.push_back(std::move(m));
    if (both)
      for (auto& m : predict_class_depth(model, b.images, scheme)) cls.push_back(std::move(m));
  }
  ValidationResult r;
  r.images = gts.size();
  r.silog_reg = mean_scaled_silog(reg, gts);
  r.silog_cls = both ? mean_scaled_silog(cls, gts) : kNaN;
  return r;
}

std::vector<DepthMap> label_oracle_depth(const Dataset& set, const IntervalScheme& scheme) {
  std::vector<DepthMap> out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& gt = set[i].gt;
    IntervalLabeling labels = label_map(gt, scheme);
    DepthMap m = DepthMap::empty(gt.height, gt.width);
    for (std::size_t p = 0; p < gt.size(); ++p)
      if (labels.valid[p]) {
        m.depth[p] = dequantize(static_cast<std::size_t>(labels.label[p]), scheme);
        m.valid[p] = 1;
      }
    out.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

TaskWeights make_weights(const WeightingConfig& w) {
  switch (w.mode) {
    case WeightingMode::equal: return TaskWeights::equal();
    case WeightingMode::manual: return TaskWeights::manual(w.manual_reg, w.manual_cls);
    case WeightingMode::learned: return TaskWeights::learned(w.s_reg_init, w.s_cls_init);
  }
  return TaskWeights::equal();
}

constexpr std::uint64_t kModelStream = 0x30de1;
constexpr std::uint64_t kBatchStream = 0xba7c4;
constexpr std::uint64_t kDropoutStream = 0xd40;

}  // namespace

Trainer::Trainer(ExperimentConfig config)
    : config_((config.validate(), std::move(config))),
      scheme_(config_.scheme()),
      bounds_(config_.bounds()),
      train_(std::make_unique<Dataset>(config_.train_data, scheme_)),
      val_(std::make_unique<Dataset>(config_.val_data, scheme_)),
      model_(Model::build(config_.model, mix_seed(config_.seed, kModelStream))),
      weights_(make_weights(config_.weighting)) {
  adam_.hyper = config_.adam;
  log_.mode = config_.weighting.mode;
  log_.multi_task = config_.multi_task();
  log_.header = {
      "weighting: " + (config_.multi_task() ? to_string(config_.weighting.mode) : std::string("single-task")),
      "manual_weights: " + fmt(config_.weighting.manual_reg) + "," + fmt(config_.weighting.manual_cls),
      "validation_interval: " + std::to_string(config_.validation_interval),
      "seed: " + std::to_string(config_.seed),
  };
}

Trainer::~Trainer() = default;

std::vector<OptimParam> Trainer::optim_params() {
  std::vector<OptimParam> ps;
  for (auto& p : model_.parameters()) ps.push_back({p, true});
  if (config_.multi_task() && weights_.mode() == WeightingMode::learned) {
    ps.push_back({weights_.s_reg(), false});
    ps.push_back({weights_.s_cls(), false});
  }
  return ps;
}

namespace {

struct StepOutcome {
  bool skipped = false;
  LossBreakdown loss;
};

}  // namespace

bool Trainer::step() {
  if (!batches_)
    batches_ = std::make_unique<BatchIterator>(*train_, config_.batch_size, config_.augment,
                                               mix_seed(config_.seed, kBatchStream), config_.prefetch, iter_);
  Batch batch = batches_->next();
  const double alpha = lr_at(config_.schedule(), std::min(iter_, config_.total_iters));
  const std::size_t t = iter_;
  ++iter_;
  if (batch.empty()) {
    ++skipped_;
    if (config_.validation_interval && iter_ % config_.validation_interval == 0) pending_validation_ = true;
    return false;
  }

  std::vector<double> target(batch.depth.size(), 0.0);
  for (std::size_t i = 0; i < target.size(); ++i)
    if (batch.mask.bits[i]) target[i] = std::clamp(encode_depth(std::max(batch.depth[i], bounds_.d_min()), bounds_), 0.0, 1.0);

  std::mt19937_64 rng(mix_seed(config_.seed, t, kDropoutStream));
  const bool mt = config_.multi_task();
  auto out = model_.forward(batch.images, mt ? Heads::both : Heads::reg_only, &rng);
  Tensor l_reg = sparse_mse(out.regression, target, batch.mask);
  LossBreakdown bd = mt ? combine(l_reg, sparse_softmax_ce(out.class_logits, batch.labels, batch.mask), weights_)
                        : regression_only(l_reg);
  bd.valid_pixel_count = batch.valid_count;

  auto params = optim_params();
  try {
    if (!std::isfinite(bd.total)) throw NonFiniteError("non-finite loss at iteration " + std::to_string(t));
    for (auto& p : params) p.tensor.zero_grad();
    backward(bd.l_mt);
    adam_step(params, adam_, alpha);
  } catch (const NonFiniteError& e) {
    --iter_;
    if (!failure_path_.empty()) save_checkpoint(failure_path_);
    throw NonFiniteError(std::string(e.what()) + " (l_reg=" + fmt(bd.l_reg) + ", l_cls=" + fmt(bd.l_cls) +
                         ", alpha=" + fmt(alpha) + ")" +
                         (failure_path_.empty() ? "" : "; last good state saved to " + failure_path_));
  }

  TrainRow row;
  row.iter = iter_;
  row.l_reg = bd.l_reg;
  row.l_cls = bd.l_cls;
  row.l_mt = bd.total;
  row.w_reg = bd.w_reg;
  row.w_cls = bd.w_cls;
  row.s_reg = (mt && weights_.mode() == WeightingMode::learned) ? bd.r_reg * 2.0 : 0.0;
  row.s_cls = (mt && weights_.mode() == WeightingMode::learned) ? bd.r_cls * 2.0 : 0.0;
  row.alpha = alpha;
  row.skipped_batches = skipped_;
  log_.train.push_back(row);

  if (iter_ % config_.validation_interval == 0 || pending_validation_) validate_now();
  return true;
}

void Trainer::validate_now() {
  pending_validation_ = false;
  auto r = validate(model_, *val_, scheme_);
  log_.val.push_back({iter_, r.silog_reg, r.silog_cls});
}

void Trainer::run() { run_until(config_.total_iters); }

void Trainer::run_until(std::size_t iteration) {
  while (iter_ < iteration) step();
}

double Trainer::sweep_step(double alpha) {
  if (!batches_)
    batches_ = std::make_unique<BatchIterator>(*train_, config_.batch_size, config_.augment,
                                               mix_seed(config_.seed, kBatchStream), config_.prefetch, iter_);
  Batch batch = batches_->next();
  const std::size_t t = iter_++;
  if (batch.empty()) return sweep_step(alpha);
  std::vector<double> target(batch.depth.size(), 0.0);
  for (std::size_t i = 0; i < target.size(); ++i)
    if (batch.mask.bits[i]) target[i] = std::clamp(encode_depth(std::max(batch.depth[i], bounds_.d_min()), bounds_), 0.0, 1.0);
  std::mt19937_64 rng(mix_seed(config_.seed, t, kDropoutStream));
  const bool mt = config_.multi_task();
  auto out = model_.forward(batch.images, mt ? Heads::both : Heads::reg_only, &rng);
  Tensor l_reg = sparse_mse(out.regression, target, batch.mask);
  LossBreakdown bd = mt ? combine(l_reg, sparse_softmax_ce(out.class_logits, batch.labels, batch.mask), weights_)
                        : regression_only(l_reg);
  if (!std::isfinite(bd.total)) return kNaN;
  auto params = optim_params();
  for (auto& p : params) p.tensor.zero_grad();
  backward(bd.l_mt);
  adam_step(params, adam_, alpha);
  return bd.total;
}

std::unique_ptr<Trainer> Trainer::fork() const {
  auto t = std::make_unique<Trainer>(config_);
  t->model_.set_flat_parameters(model_.flat_parameters());
  t->weights_.s_reg().mutable_values()[0] = weights_.s_reg_value();
  t->weights_.s_cls().mutable_values()[0] = weights_.s_cls_value();
  t->adam_ = adam_;
  t->iter_ = iter_;
  t->skipped_ = skipped_;
  return t;
}

void Trainer::save_checkpoint(const std::string& path) const {
  Checkpoint c;
  c.config = config_;
  c.iteration = iter_;
  c.skipped = skipped_;
  c.parameters = model_.flat_parameters();
  c.s_reg = weights_.s_reg_value();
  c.s_cls = weights_.s_cls_value();
  c.adam = adam_;
  write_checkpoint(c, path);
}

void Trainer::restore_checkpoint(const std::string& path) {
  Checkpoint c = read_checkpoint(path);
  if (c.config.model.n_cls != config_.model.n_cls)
    throw ConfigError("config conflict: checkpoint has n_cls=" + std::to_string(c.config.model.n_cls) +
                      ", run expects n_cls=" + std::to_string(config_.model.n_cls));
  if (!(c.config.model == config_.model)) throw ConfigError("config conflict: checkpoint model architecture differs");
  if (c.config.weighting.mode != config_.weighting.mode)
    throw ConfigError("config conflict: checkpoint weighting mode differs");
  model_.set_flat_parameters(c.parameters);
  weights_.s_reg().mutable_values()[0] = c.s_reg;
  weights_.s_cls().mutable_values()[0] = c.s_cls;
  adam_ = c.adam;
  iter_ = c.iteration;
  skipped_ = c.skipped;
  pending_validation_ = false;
  batches_.reset();
}

TrainResult train(const ExperimentConfig& config) {
  Trainer t(config);
  t.run();
  return {t.model(), t.weights(), t.log()};
}

LrSweepRecord find_learning_rate(const ExperimentConfig& config, double alpha_start, double alpha_end,
                                 const LrSweepOptions& options) {
  Trainer base(config);
  auto probe = base.fork();
  return lr_range_test([&](double a) { return probe->sweep_step(a); }, alpha_start, alpha_end, options);
}

// ---------------------------------------------------------------------------
// Checkpoint files

namespace {

constexpr char kMagic[8] = {'M', 'D', 'C', 'K', 'P', 'T', '\0', '\0'};

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf.insert(buf.end(), b, b + n);
  }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void vec(const std::vector<double>& v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }
  std::vector<unsigned char> buf;
};

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> b) : buf(b) {}
  void raw(void* p, std::size_t n) {
    if (pos + n > buf.size()) throw FormatError("checkpoint truncated");
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof v);
    return v;
  }
  std::vector<double> vec() {
    const auto n = u64();
    if (n > (buf.size() - pos) / sizeof(double)) throw FormatError("checkpoint truncated");
    std::vector<double> v(n);
    raw(v.data(), n * sizeof(double));
    return v;
  }
  std::span<const unsigned char> buf;
  std::size_t pos = 0;
};

std::uint64_t fnv1a(std::span<const unsigned char> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void write_checkpoint(const Checkpoint& c, const std::string& path) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  const std::uint32_t version = kCheckpointVersion;
  w.raw(&version, sizeof version);
  const std::string cfg = to_json(c.config).dump();
  w.u64(cfg.size());
  w.raw(cfg.data(), cfg.size());
  w.u64(c.iteration);
  w.u64(c.skipped);
  w.vec(c.parameters);
  w.f64(c.s_reg);
  w.f64(c.s_cls);
  w.f64(c.adam.hyper.beta1);
  w.f64(c.adam.hyper.beta2);
  w.f64(c.adam.hyper.eps);
  w.f64(c.adam.hyper.weight_decay);
  w.u64(c.adam.step);
  w.u64(c.adam.m.size());
  for (std::size_t i = 0; i < c.adam.m.size(); ++i) {
    w.vec(c.adam.m[i]);
    w.vec(c.adam.v[i]);
  }
  w.u64(fnv1a(w.buf));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
  if (!out) throw FormatError("failed writing checkpoint '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof kMagic + 4 + 8) throw FormatError("checkpoint '" + path + "' is truncated");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) throw FormatError("'" + path + "' is not a checkpoint");
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  std::span<const unsigned char> payload(bytes.data(), bytes.size() - 8);
  Reader r(payload);
  char magic[8];
  r.raw(magic, 8);
  std::uint32_t version;
  r.raw(&version, sizeof version);
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  if (fnv1a(payload) != stored) throw FormatError("checkpoint '" + path + "' is corrupt (checksum mismatch)");
  Checkpoint c;
  const auto len = r.u64();
  if (len > payload.size()) throw FormatError("checkpoint truncated");
  std::string cfg(len, '\0');
  r.raw(cfg.data(), len);
  try {
    c.config = config_from_json(nlohmann::json::parse(cfg));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config unreadable: ") + e.what());
  }
  c.iteration = r.u64();
  c.skipped = r.u64();
  c.parameters = r.vec();
  c.s_reg = r.f64();
  c.s_cls = r.f64();
  c.adam.hyper.beta1 = r.f64();
  c.adam.hyper.beta2 = r.f64();
  c.adam.hyper.eps = r.f64();
  c.adam.hyper.weight_decay = r.f64();
  c.adam.step = r.u64();
  const auto groups = r.u64();
  if (groups > payload.size()) throw FormatError("checkpoint truncated");
  for (std::uint64_t i = 0; i < groups; ++i) {
    c.adam.m.push_back(r.vec());
    c.adam.v.push_back(r.vec());
  }
  if (r.pos != payload.size()) throw FormatError("checkpoint has trailing bytes");
  return c;
}

// ---------------------------------------------------------------------------
// Ablations

std::string to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::n_cls: return "n_cls";
    case AblationAxis::weighting: return "weighting";
    case AblationAxis::bounds: return "bounds";
    case AblationAxis::patch: return "patch";
  }
  return "?";
}

AblationAxis axis_from_string(const std::string& name) {
  if (name == "n_cls") return AblationAxis::n_cls;
  if (name == "weighting") return AblationAxis::weighting;
  if (name == "bounds") return AblationAxis::bounds;
  if (name == "patch") return AblationAxis::patch;
  throw ConfigError("unknown ablation axis '" + name + "'");
}

std::vector<AblationCell> ablation_grid(AblationAxis axis, const ExperimentConfig& base) {
  std::vector<AblationCell> cells;
  auto learned = base;
  learned.model.classification_head = true;
  learned.weighting.mode = WeightingMode::learned;
  switch (axis) {
    case AblationAxis::n_cls: {
      auto reg = base;
      reg.model.classification_head = false;
      cells.push_back({"reg_only", reg});
      for (std::size_t n : {2, 4, 32, 64}) {
        auto c = learned;
        c.model.n_cls = n;
        cells.push_back({"n_cls=" + std::to_string(n), c});
      }
      break;
    }
    case AblationAxis::weighting:
      for (auto mode : {WeightingMode::equal, WeightingMode::manual, WeightingMode::learned}) {
        auto c = learned;
        c.weighting.mode = mode;
        cells.push_back({to_string(mode), c});
      }
      break;
    case AblationAxis::bounds: {
      auto tight = learned;
      tight.d_min = 2.0;
      tight.d_max = 125.0;
      auto wide = learned;
      wide.d_min = 0.0;
      wide.d_max = 256.0;
      cells.push_back({"bounds=2-125", tight});
      cells.push_back({"bounds=0-256", wide});
      break;
    }
    case AblationAxis::patch: {
      auto small = learned;
      small.augment.crop_height = small.augment.crop_width = 32;
      auto big = learned;
      big.augment.crop_height = big.augment.crop_width = 64;
      big.batch_size = std::max<std::size_t>(1, base.batch_size / 2);
      cells.push_back({"patch=32", small});
      cells.push_back({"patch=64", big});
      break;
    }
  }
  for (auto& c : cells) c.config.validate();
  return cells;
}

double median(std::vector<double> v) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double sample_stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

AblationRow run_cell(const AblationCell& cell, std::span<const std::uint64_t> seeds, std::size_t jobs) {
  AblationRow row;
  row.label = cell.label;
  row.seeds.assign(seeds.begin(), seeds.end());
  row.best_reg.assign(seeds.size(), kNaN);
  row.best_cls.assign(seeds.size(), kNaN);
  auto run_one = [&](std::size_t i) {
    auto cfg = cell.config;
    cfg.seed = seeds[i];
    Trainer t(cfg);
    t.run();
    row.best_reg[i] = t.log().best_silog_reg();
    row.best_cls[i] = t.log().best_silog_cls();
  };
  if (jobs <= 1) {
    for (std::size_t i = 0; i < seeds.size(); ++i) run_one(i);
  } else {
    std::vector<std::thread> pool;
    std::mutex err_mu;
    std::exception_ptr err;
    std::size_t next = 0;
    std::mutex next_mu;
    for (std::size_t w = 0; w < std::min(jobs, seeds.size()); ++w)
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard lock(next_mu);
            if (next >= seeds.size()) return;
            i = next++;
          }
          try {
            run_one(i);
          } catch (...) {
            std::lock_guard lock(err_mu);
            if (!err) err = std::current_exception();
          }
        }
      });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
  }
  row.median_reg = median(row.best_reg);
  row.median_cls = median(row.best_cls);
  row.spread_reg = sample_stddev(row.best_reg);
  return row;
}

AblationTable run_ablation(AblationAxis axis, const ExperimentConfig& base, std::span<const std::uint64_t> seeds,
                           std::size_t jobs) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  AblationTable table;
  table.axis = to_string(axis);
  for (const auto& cell : ablation_grid(axis, base)) table.rows.push_back(run_cell(cell, seeds, jobs));
  return table;
}

void AblationTable::write_csv(std::ostream& os) const {
  os << "label,seed,best_silog_reg_scaled,best_silog_cls_scaled\n";
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.seeds.size(); ++i)
      os << r.label << ',' << r.seeds[i] << ',' << fmt(r.best_reg[i]) << ',' << fmt(r.best_cls[i]) << '\n';
}

nlohmann::json AblationTable::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  for (const auto& r : rows) {
    nlohmann::json reg = nlohmann::json::array(), cls = nlohmann::json::array();
    for (double v : r.best_reg) reg.push_back(num(v));
    for (double v : r.best_cls) cls.push_back(num(v));
    rows_json.push_back({{"label", r.label},
                         {"seeds", r.seeds},
                         {"best_silog_reg_scaled", reg},
                         {"best_silog_cls_scaled", cls},
                         {"median_reg", num(r.median_reg)},
                         {"median_cls", num(r.median_cls)},
                         {"spread_reg", num(r.spread_reg)}});
  }
  return {{"axis", axis}, {"rows", rows_json}};
}

const AblationRow& AblationTable::row(const std::string& label) const {
  for (const auto& r : rows)
    if (r.label == label) return r;
  throw ConfigError("no ablation row '" + label + "'");
}

}  // namespace multidepth
