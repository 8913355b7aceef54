//
// Copyright 2026 The MIA Audit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#include "mia/models.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "absl/strings/str_cat.h"

namespace mia {
namespace {

bool IsMlp(const ModelArchitecture& arch) {
  return arch.kind == ModelKind::kMlp;
}

// Activations of one forward pass, kept for backpropagation.
struct ForwardPass {
  std::vector<double> hidden_pre;  // mlp only
  std::vector<double> hidden;      // mlp only
  std::vector<double> logits;
};

// Accumulates x^T w into `out` (out[k] += sum_j x[j] * w(j, k)), skipping
// zero inputs; binary records are mostly zeros and ones.
void AccumulateAffine(std::span<const double> x, const Matrix& w,
                      std::span<double> out) {
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double xj = x[j];
    if (xj == 0.0) continue;
    std::span<const double> row = w.row(j);
    if (xj == 1.0) {
      for (std::size_t k = 0; k < out.size(); ++k) out[k] += row[k];
    } else {
      for (std::size_t k = 0; k < out.size(); ++k) out[k] += xj * row[k];
    }
  }
}

void Forward(const ModelArchitecture& arch, std::span<const Matrix> params,
             std::span<const double> x, ForwardPass& pass) {
  if (IsMlp(arch)) {
    const Matrix& w1 = params[0];
    const Matrix& b1 = params[1];
    const Matrix& w2 = params[2];
    const Matrix& b2 = params[3];
    pass.hidden_pre.assign(b1.values().begin(), b1.values().end());
    AccumulateAffine(x, w1, pass.hidden_pre);
    pass.hidden.resize(pass.hidden_pre.size());
    for (std::size_t k = 0; k < pass.hidden.size(); ++k) {
      const double a = pass.hidden_pre[k];
      pass.hidden[k] = arch.hidden_activation == Activation::kTanh
                           ? std::tanh(a)
                           : (a > 0.0 ? a : 0.0);
    }
    pass.logits.assign(b2.values().begin(), b2.values().end());
    AccumulateAffine(pass.hidden, w2, pass.logits);
  } else {
    const Matrix& w = params[0];
    const Matrix& b = params[1];
    pass.logits.assign(b.values().begin(), b.values().end());
    AccumulateAffine(x, w, pass.logits);
  }
}

// Backpropagates dL/dlogits for one record, accumulating into `grads`.
void Backward(const ModelArchitecture& arch, std::span<const Matrix> params,
              std::span<const double> x, const ForwardPass& pass,
              std::span<const double> dlogits, std::vector<Matrix>& grads,
              std::vector<double>& scratch) {
  auto outer_accumulate = [](std::span<const double> in,
                             std::span<const double> delta, Matrix& g) {
    for (std::size_t j = 0; j < in.size(); ++j) {
      const double v = in[j];
      if (v == 0.0) continue;
      std::span<double> row = g.row(j);
      for (std::size_t k = 0; k < delta.size(); ++k) row[k] += v * delta[k];
    }
  };
  auto add = [](std::span<const double> delta, Matrix& g) {
    std::span<double> out = g.values();
    for (std::size_t k = 0; k < delta.size(); ++k) out[k] += delta[k];
  };

  if (!IsMlp(arch)) {
    outer_accumulate(x, dlogits, grads[0]);
    add(dlogits, grads[1]);
    return;
  }
  const Matrix& w2 = params[2];
  outer_accumulate(pass.hidden, dlogits, grads[2]);
  add(dlogits, grads[3]);

  std::vector<double>& dpre = scratch;
  dpre.assign(pass.hidden.size(), 0.0);
  for (std::size_t k = 0; k < dpre.size(); ++k) {
    std::span<const double> row = w2.row(k);
    double s = 0.0;
    for (std::size_t c = 0; c < dlogits.size(); ++c) s += row[c] * dlogits[c];
    if (arch.hidden_activation == Activation::kTanh) {
      const double h = pass.hidden[k];
      dpre[k] = s * (1.0 - h * h);
    } else {
      dpre[k] = pass.hidden_pre[k] > 0.0 ? s : 0.0;
    }
  }
  outer_accumulate(x, dpre, grads[0]);
  add(dpre, grads[1]);
}

// Softmax at t = 1 written into `probs`; returns -log p[label].
double SoftmaxNll(std::span<const double> logits, int label,
                  std::vector<double>& probs) {
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  probs.resize(logits.size());
  double total = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    probs[c] = std::exp(logits[c] - max_logit);
    total += probs[c];
  }
  for (double& p : probs) p /= total;
  return -(logits[label] - max_logit - std::log(total));
}

double PenaltyNorm(const ModelArchitecture& arch,
                   std::span<const Matrix> params) {
  double total = 0.0;
  for (std::size_t i : PenalizedParameterIndices(arch)) {
    for (double v : params[i].values()) total += v * v;
  }
  return total;
}

absl::Status CheckRecords(const ModelArchitecture& arch,
                          std::span<const DataRecord> records,
                          const char* what) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const DataRecord& r = records[i];
    if (r.features.size() != arch.input_dim) {
      return absl::InvalidArgumentError(
          absl::StrCat(what, " record ", i, " has ", r.features.size(),
                       " features, model expects ", arch.input_dim));
    }
    if (r.label < 0 || r.label >= arch.class_count) {
      return absl::InvalidArgumentError(
          absl::StrCat(what, " record ", i, " has label ", r.label,
                       " outside [0, ", arch.class_count, ")"));
    }
  }
  return absl::OkStatus();
}

// Little-endian byte writer/reader for the model format.
class ByteWriter {
 public:
  void U8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void U64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) U8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void F64(double v) { U64(std::bit_cast<std::uint64_t>(v)); }
  void Bytes(std::string_view s) { out_.append(s); }
  std::string Take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view in) : in_(in) {}
  bool U8(std::uint8_t& v) {
    if (pos_ + 1 > in_.size()) return false;
    v = static_cast<std::uint8_t>(in_[pos_++]);
    return true;
  }
  bool U64(std::uint64_t& v) {
    if (pos_ + 8 > in_.size()) return false;
    v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(in_[pos_++]))
           << (8 * i);
    }
    return true;
  }
  bool F64(double& v) {
    std::uint64_t bits;
    if (!U64(bits)) return false;
    v = std::bit_cast<double>(bits);
    return true;
  }
  bool Bytes(std::size_t n, std::string_view& v) {
    if (pos_ + n > in_.size()) return false;
    v = in_.substr(pos_, n);
    pos_ += n;
    return true;
  }
  bool AtEnd() const { return pos_ == in_.size(); }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

constexpr std::string_view kModelMagic = "MIAMODEL";
constexpr std::uint8_t kModelFormatVersion = 1;

}  // namespace

absl::Status ModelArchitecture::Validate() const {
  if (input_dim < 1) {
    return absl::InvalidArgumentError("input_dim must be at least 1");
  }
  if (class_count < 2) {
    return absl::InvalidArgumentError(
        absl::StrCat("class_count must be at least 2, got ", class_count));
  }
  if (kind == ModelKind::kMlp && hidden_size < 1) {
    return absl::InvalidArgumentError("mlp hidden_size must be at least 1");
  }
  return absl::OkStatus();
}

absl::Status TrainingConfig::Validate() const {
  if (!(learning_rate > 0.0)) {
    return absl::InvalidArgumentError("learning_rate must be positive");
  }
  if (!(lr_decay >= 0.0)) {
    return absl::InvalidArgumentError("lr_decay must be nonnegative");
  }
  if (max_epochs < 1) {
    return absl::InvalidArgumentError("max_epochs must be at least 1");
  }
  if (batch_size < 1) {
    return absl::InvalidArgumentError("batch_size must be at least 1");
  }
  if (!(l2_lambda >= 0.0)) {
    return absl::InvalidArgumentError("l2_lambda must be nonnegative");
  }
  if (!(softmax_temperature > 0.0) || !std::isfinite(softmax_temperature)) {
    return absl::InvalidArgumentError("softmax_temperature must be positive");
  }
  return absl::OkStatus();
}

std::vector<Matrix> ZeroParameters(const ModelArchitecture& arch) {
  const std::size_t classes = static_cast<std::size_t>(arch.class_count);
  if (IsMlp(arch)) {
    return {Matrix(arch.input_dim, arch.hidden_size), Matrix(1, arch.hidden_size),
            Matrix(arch.hidden_size, classes), Matrix(1, classes)};
  }
  return {Matrix(arch.input_dim, classes), Matrix(1, classes)};
}

std::vector<Matrix> InitializeParameters(const ModelArchitecture& arch,
                                         Rng& rng) {
  std::vector<Matrix> params = ZeroParameters(arch);
  auto fill = [&rng](Matrix& m, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : m.values()) v = (2.0 * rng.Uniform() - 1.0) * bound;
  };
  if (IsMlp(arch)) {
    fill(params[0], arch.input_dim);
    fill(params[1], arch.input_dim);
    fill(params[2], arch.hidden_size);
    fill(params[3], arch.hidden_size);
  } else {
    fill(params[0], arch.input_dim);
    fill(params[1], arch.input_dim);
  }
  return params;
}

std::vector<std::size_t> PenalizedParameterIndices(
    const ModelArchitecture& arch) {
  if (IsMlp(arch)) return {0, 2};
  return {0};
}

absl::Status CheckParameterShapes(const ModelArchitecture& arch,
                                  std::span<const Matrix> params) {
  const std::vector<Matrix> expected = ZeroParameters(arch);
  if (params.size() != expected.size()) {
    return absl::InvalidArgumentError(
        absl::StrCat("expected ", expected.size(), " parameter matrices, got ",
                     params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].SameShape(expected[i])) {
      return absl::InvalidArgumentError(
          absl::StrCat("parameter ", i, " has shape ", params[i].rows(), "x",
                       params[i].cols(), ", expected ", expected[i].rows(),
                       "x", expected[i].cols()));
    }
  }
  return absl::OkStatus();
}

absl::StatusOr<std::vector<double>> ComputeLogits(
    const ModelArchitecture& arch, std::span<const Matrix> params,
    std::span<const double> features) {
  if (features.size() != arch.input_dim) {
    return absl::InvalidArgumentError(
        absl::StrCat("got ", features.size(), " features, model expects ",
                     arch.input_dim));
  }
  ForwardPass pass;
  Forward(arch, params, features, pass);
  return std::move(pass.logits);
}

absl::StatusOr<LossAndGradients> ComputeLossAndGradients(
    const ModelArchitecture& arch, std::span<const Matrix> params,
    std::span<const DataRecord> batch, double l2_lambda) {
  if (absl::Status s = CheckParameterShapes(arch, params); !s.ok()) return s;
  if (absl::Status s = CheckRecords(arch, batch, "batch"); !s.ok()) return s;
  if (batch.empty()) return absl::InvalidArgumentError("empty batch");

  LossAndGradients out;
  out.gradients = ZeroParameters(arch);
  ForwardPass pass;
  std::vector<double> probs;
  std::vector<double> scratch;
  const double scale = 1.0 / static_cast<double>(batch.size());
  double nll = 0.0;
  for (const DataRecord& r : batch) {
    Forward(arch, params, r.features, pass);
    nll += SoftmaxNll(pass.logits, r.label, probs);
    probs[r.label] -= 1.0;
    for (double& d : probs) d *= scale;
    Backward(arch, params, r.features, pass, probs, out.gradients, scratch);
  }
  out.loss = nll * scale + l2_lambda * PenaltyNorm(arch, params);
  if (l2_lambda > 0.0) {
    for (std::size_t i : PenalizedParameterIndices(arch)) {
      std::span<double> g = out.gradients[i].values();
      std::span<const double> p = params[i].values();
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += 2.0 * l2_lambda * p[j];
    }
  }
  return out;
}

absl::StatusOr<TrainedModel> Train(const ModelArchitecture& arch,
                                   const TrainingConfig& config,
                                   std::span<const DataRecord> train,
                                   std::span<const DataRecord> test) {
  if (absl::Status s = arch.Validate(); !s.ok()) return s;
  if (absl::Status s = config.Validate(); !s.ok()) return s;
  if (absl::Status s = CheckRecords(arch, train, "training"); !s.ok()) return s;
  if (absl::Status s = CheckRecords(arch, test, "test"); !s.ok()) return s;
  if (train.empty()) {
    return absl::InvalidArgumentError("training set is empty");
  }

  Rng rng(config.seed);
  TrainedModel model;
  model.architecture = arch;
  model.training_config = config;
  model.parameters = InitializeParameters(arch, rng);

  std::vector<Matrix> grads = ZeroParameters(arch);
  const std::vector<std::size_t> penalized = PenalizedParameterIndices(arch);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  ForwardPass pass;
  std::vector<double> probs;
  std::vector<double> scratch;
  std::uint64_t step = 0;
  const std::size_t batch_size = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.Shuffle(order);
    double epoch_nll = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      for (Matrix& g : grads) g.Fill(0.0);
      for (std::size_t b = start; b < end; ++b) {
        const DataRecord& r = train[order[b]];
        Forward(arch, model.parameters, r.features, pass);
        epoch_nll += SoftmaxNll(pass.logits, r.label, probs);
        probs[r.label] -= 1.0;
        for (double& d : probs) d *= scale;
        Backward(arch, model.parameters, r.features, pass, probs, grads,
                 scratch);
      }
      if (config.l2_lambda > 0.0) {
        for (std::size_t i : penalized) {
          std::span<double> g = grads[i].values();
          std::span<const double> p = model.parameters[i].values();
          for (std::size_t j = 0; j < g.size(); ++j) {
            g[j] += 2.0 * config.l2_lambda * p[j];
          }
        }
      }
      absl::Status s = SgdStepInPlace(model.parameters, grads,
                                      config.learning_rate, config.lr_decay,
                                      step++);
      if (!s.ok()) return s;
    }
    const double loss =
        epoch_nll / static_cast<double>(train.size()) +
        config.l2_lambda * PenaltyNorm(arch, model.parameters);
    if (!std::isfinite(loss) ||
        !std::all_of(model.parameters.begin(), model.parameters.end(),
                     [](const Matrix& m) { return m.AllFinite(); })) {
      return absl::AbortedError(
          absl::StrCat("training diverged at epoch ", epoch,
                       " (loss = ", loss, ")"));
    }
  }

  absl::StatusOr<double> train_acc = Accuracy(model, train);
  if (!train_acc.ok()) return train_acc.status();
  model.train_accuracy = *train_acc;
  if (!test.empty()) {
    absl::StatusOr<double> test_acc = Accuracy(model, test);
    if (!test_acc.ok()) return test_acc.status();
    model.test_accuracy = *test_acc;
  }
  return model;
}

absl::StatusOr<PredictionVector> Predict(const TrainedModel& model,
                                         std::span<const double> features) {
  absl::StatusOr<std::vector<double>> logits =
      ComputeLogits(model.architecture, model.parameters, features);
  if (!logits.ok()) return logits.status();
  return SoftmaxWithTemperature(*logits,
                                model.training_config.softmax_temperature);
}

absl::StatusOr<double> Accuracy(const TrainedModel& model,
                                std::span<const DataRecord> records) {
  if (records.empty()) {
    return absl::InvalidArgumentError("accuracy over an empty record list");
  }
  std::size_t correct = 0;
  for (const DataRecord& r : records) {
    absl::StatusOr<PredictionVector> p = Predict(model, r.features);
    if (!p.ok()) return p.status();
    correct += static_cast<int>(ArgMax(*p)) == r.label;
  }
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

absl::StatusOr<std::vector<std::optional<double>>> PerClassAccuracy(
    const TrainedModel& model, std::span<const DataRecord> records) {
  if (records.empty()) {
    return absl::InvalidArgumentError("accuracy over an empty record list");
  }
  const std::size_t classes =
      static_cast<std::size_t>(model.architecture.class_count);
  std::vector<std::size_t> correct(classes, 0);
  std::vector<std::size_t> total(classes, 0);
  for (const DataRecord& r : records) {
    if (r.label < 0 || static_cast<std::size_t>(r.label) >= classes) {
      return absl::InvalidArgumentError(
          absl::StrCat("label ", r.label, " out of range"));
    }
    absl::StatusOr<PredictionVector> p = Predict(model, r.features);
    if (!p.ok()) return p.status();
    ++total[r.label];
    correct[r.label] += static_cast<int>(ArgMax(*p)) == r.label;
  }
  std::vector<std::optional<double>> out(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    if (total[c] > 0) {
      out[c] = static_cast<double>(correct[c]) / static_cast<double>(total[c]);
    }
  }
  return out;
}

absl::StatusOr<TrainedModel> WithTemperature(const TrainedModel& model,
                                             double t) {
  if (!(t > 0.0) || !std::isfinite(t)) {
    return absl::InvalidArgumentError("temperature must be positive");
  }
  TrainedModel copy = model;
  copy.training_config.softmax_temperature = t;
  return copy;
}

std::string SerializeModel(const TrainedModel& model) {
  ByteWriter w;
  w.Bytes(kModelMagic);
  w.U8(kModelFormatVersion);
  const ModelArchitecture& a = model.architecture;
  w.U8(a.kind == ModelKind::kMlp ? 1 : 0);
  w.U8(a.hidden_activation == Activation::kRelu ? 1 : 0);
  w.U64(a.input_dim);
  w.U64(a.hidden_size);
  w.U64(static_cast<std::uint64_t>(a.class_count));
  const TrainingConfig& c = model.training_config;
  w.F64(c.learning_rate);
  w.F64(c.lr_decay);
  w.U64(static_cast<std::uint64_t>(c.max_epochs));
  w.U64(static_cast<std::uint64_t>(c.batch_size));
  w.F64(c.l2_lambda);
  w.F64(c.softmax_temperature);
  w.U64(c.seed);
  w.F64(model.train_accuracy);
  w.U8(model.test_accuracy.has_value() ? 1 : 0);
  w.F64(model.test_accuracy.value_or(0.0));
  w.U64(model.parameters.size());
  for (const Matrix& m : model.parameters) {
    w.U64(m.rows());
    w.U64(m.cols());
    for (double v : m.values()) w.F64(v);
  }
  return w.Take();
}

absl::StatusOr<TrainedModel> DeserializeModel(std::string_view bytes) {
  ByteReader r(bytes);
  auto truncated = [] {
    return absl::DataLossError("truncated model encoding");
  };
  std::string_view magic;
  if (!r.Bytes(kModelMagic.size(), magic) || magic != kModelMagic) {
    return absl::DataLossError("not a model file (bad magic)");
  }
  std::uint8_t version, kind, activation, has_test;
  if (!r.U8(version)) return truncated();
  if (version != kModelFormatVersion) {
    return absl::DataLossError(
        absl::StrCat("unsupported model format version ", version));
  }
  TrainedModel model;
  std::uint64_t input_dim, hidden, classes, epochs, batch, seed, count;
  double test_acc;
  ModelArchitecture& a = model.architecture;
  TrainingConfig& c = model.training_config;
  if (!r.U8(kind) || !r.U8(activation) || !r.U64(input_dim) ||
      !r.U64(hidden) || !r.U64(classes) || !r.F64(c.learning_rate) ||
      !r.F64(c.lr_decay) || !r.U64(epochs) || !r.U64(batch) ||
      !r.F64(c.l2_lambda) || !r.F64(c.softmax_temperature) || !r.U64(seed) ||
      !r.F64(model.train_accuracy) || !r.U8(has_test) || !r.F64(test_acc) ||
      !r.U64(count)) {
    return truncated();
  }
  a.kind = kind == 1 ? ModelKind::kMlp : ModelKind::kLogisticRegression;
  a.hidden_activation = activation == 1 ? Activation::kRelu : Activation::kTanh;
  a.input_dim = input_dim;
  a.hidden_size = hidden;
  a.class_count = static_cast<int>(classes);
  c.max_epochs = static_cast<int>(epochs);
  c.batch_size = static_cast<int>(batch);
  c.seed = seed;
  if (has_test) model.test_accuracy = test_acc;
  if (absl::Status s = a.Validate(); !s.ok()) {
    return absl::DataLossError(absl::StrCat("corrupt architecture: ",
                                            s.message()));
  }
  if (count > 16) return absl::DataLossError("implausible parameter count");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint64_t rows, cols;
    if (!r.U64(rows) || !r.U64(cols)) return truncated();
    if (rows != 0 && cols > bytes.size() / 8 / rows) return truncated();
    Matrix m(rows, cols);
    for (double& v : m.values()) {
      if (!r.F64(v)) return truncated();
    }
    model.parameters.push_back(std::move(m));
  }
  if (!r.AtEnd()) return absl::DataLossError("trailing bytes after model");
  if (absl::Status s = CheckParameterShapes(a, model.parameters); !s.ok()) {
    return absl::DataLossError(absl::StrCat("corrupt parameters: ",
                                            s.message()));
  }
  return model;
}

absl::Status SaveModel(const TrainedModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) return absl::UnavailableError(absl::StrCat("cannot write ", path));
  const std::string bytes = SerializeModel(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) return absl::DataLossError(absl::StrCat("short write to ", path));
  return absl::OkStatus();
}

absl::StatusOr<TrainedModel> LoadModel(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return absl::NotFoundError(absl::StrCat("cannot open ", path));
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return DeserializeModel(bytes);
}

}  // namespace mia
