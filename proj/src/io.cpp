#include "expocnn/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>
#include <string>

#include "expocnn/csv.hpp"

namespace expocnn {

namespace {

constexpr char kDatasetMagic[4] = {'E', 'X', 'P', 'D'};
constexpr char kCheckpointMagic[4] = {'E', 'X', 'P', 'M'};

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  void tensor(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (Dim d : t.shape()) u32(static_cast<std::uint32_t>(d));
    for (float v : t.data()) f32(v);
  }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> in, const char* what) : in_(in), what_(what) {}

  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) {
      throw TruncatedFileError(std::string(what_) + " truncated at byte " + std::to_string(pos_) + " (needed " +
                               std::to_string(n) + " more)");
    }
  }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return bytes(1)[0]; }
  std::uint32_t u32() {
    auto b = bytes(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  }
  std::uint64_t u64() {
    auto b = bytes(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  Tensor tensor() {
    const std::uint32_t rank = u32();
    if (rank == 0 || rank > 8) throw FormatError(std::string(what_) + ": implausible tensor rank " + std::to_string(rank));
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = u32();
      if (d == 0) throw FormatError(std::string(what_) + ": zero tensor dimension");
      n *= static_cast<std::size_t>(d);
    }
    need(4 * n);
    std::vector<float> data(n);
    for (auto& v : data) v = f32();
    return Tensor(std::move(shape), std::move(data));
  }

  void magic(const char (&expected)[4]) {
    need(4);
    auto b = bytes(4);
    if (std::memcmp(b.data(), expected, 4) != 0) {
      throw BadMagicError(std::string(what_) + ": bad magic '" + std::string(b.begin(), b.end()) + "', expected '" +
                          std::string(expected, 4) + "'");
    }
  }

  bool at_end() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  const char* what_;
  std::size_t pos_ = 0;
};

void check_version(std::uint32_t got, std::uint32_t expected, const char* what) {
  if (got != expected) {
    throw VersionMismatchError(std::string(what) + " version " + std::to_string(got) + ", this build reads version " +
                               std::to_string(expected));
  }
}

std::uint8_t to_u8(int v, const char* what) {
  if (v < 0 || v > 255) throw ValueError(std::string(what) + " does not fit in one byte");
  return static_cast<std::uint8_t>(v);
}

}  // namespace

// ------------------------------------------------------------------ dataset

std::vector<std::uint8_t> encode_dataset(const Dataset& data) {
  ByteWriter w;
  w.bytes(kDatasetMagic, 4);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(data.samples.size()));
  w.u32(static_cast<std::uint32_t>(data.height));
  w.u32(static_cast<std::uint32_t>(data.width));
  w.u8(to_u8(data.base_lo, "base_lo"));
  w.u8(to_u8(data.base_hi, "base_hi"));
  w.u8(to_u8(data.exp_lo, "exp_lo"));
  w.u8(to_u8(data.exp_hi, "exp_hi"));
  const Shape expected{1, data.height, data.width};
  for (const Sample& s : data.samples) {
    if (s.image.shape() != expected) {
      throw ShapeError("write_dataset: image " + shape_to_string(s.image.shape()) + " does not match header " +
                       shape_to_string(expected));
    }
    for (float p : s.image.data()) {
      w.u8(static_cast<std::uint8_t>(std::clamp<long>(std::lround(p * 255.0f), 0, 255)));
    }
    w.u8(to_u8(s.base_label, "base label"));
    w.u8(to_u8(s.exp_label, "exponent label"));
    w.f32(s.meta.font_scale);
    w.f32(s.meta.noise_sigma);
    w.f32(s.meta.blur_sigma);
  }
  return w.take();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "dataset file");
  r.magic(kDatasetMagic);
  check_version(r.u32(), kDatasetVersion, "dataset file");
  const std::uint32_t count = r.u32();
  Dataset d;
  d.height = r.u32();
  d.width = r.u32();
  d.base_lo = r.u8();
  d.base_hi = r.u8();
  d.exp_lo = r.u8();
  d.exp_hi = r.u8();
  if (d.height == 0 || d.width == 0) throw FormatError("dataset file: zero image size");
  const auto pixels = static_cast<std::size_t>(d.height * d.width);
  const std::size_t record = pixels + 2 + 12;
  constexpr std::size_t kHeaderBytes = 24;
  if (bytes.size() - kHeaderBytes < static_cast<std::size_t>(count) * record) {
    throw TruncatedFileError("dataset file declares " + std::to_string(count) + " samples but holds only " +
                             std::to_string((bytes.size() - kHeaderBytes) / record));
  }
  d.samples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Sample s;
    const auto px = r.bytes(pixels);
    std::vector<float> img(pixels);
    for (std::size_t p = 0; p < pixels; ++p) img[p] = static_cast<float>(px[p]) / 255.0f;
    s.image = Tensor({1, d.height, d.width}, std::move(img));
    s.base_label = r.u8();
    s.exp_label = r.u8();
    s.meta.font_scale = r.f32();
    s.meta.noise_sigma = r.f32();
    s.meta.blur_sigma = r.f32();
    d.samples.push_back(std::move(s));
  }
  if (!r.at_end()) throw FormatError("dataset file: trailing bytes after the last record");
  return d;
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) { write_file(path, encode_dataset(data)); }

Dataset read_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

// --------------------------------------------------------------- checkpoint

std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model, const TrainingState* state) {
  ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  const std::string arch = model.arch().describe();
  w.u32(static_cast<std::uint32_t>(arch.size()));
  w.bytes(arch.data(), arch.size());
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Tensor* p : params) w.tensor(*p);
  w.u8(state ? 1 : 0);
  if (state) {
    const AdamState& a = state->adam;
    if (a.m.size() != params.size() || a.v.size() != params.size()) {
      throw ShapeError("write_checkpoint: optimizer state does not match the model");
    }
    w.f64(a.config.learning_rate);
    w.f64(a.config.beta1);
    w.f64(a.config.beta2);
    w.f64(a.config.epsilon);
    w.u64(a.step);
    w.u32(static_cast<std::uint32_t>(state->completed_epochs));
    for (const Tensor& t : a.m) w.tensor(t);
    for (const Tensor& t : a.v) w.tensor(t);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint file");
  r.magic(kCheckpointMagic);
  check_version(r.u32(), kCheckpointVersion, "checkpoint file");
  const std::uint32_t arch_len = r.u32();
  const auto arch_bytes = r.bytes(arch_len);
  const ArchSpec arch = ArchSpec::parse(std::string(arch_bytes.begin(), arch_bytes.end()));
  Checkpoint ck{Model<float>::zeros(arch), std::nullopt};
  auto params = ck.model.parameters();
  const std::uint32_t n = r.u32();
  if (n != params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(n) + " tensors, architecture needs " +
                      std::to_string(params.size()));
  }
  auto read_matching = [&](const Tensor& like) {
    Tensor t = r.tensor();
    if (t.shape() != like.shape()) {
      throw FormatError("checkpoint tensor " + shape_to_string(t.shape()) + " does not match architecture shape " +
                        shape_to_string(like.shape()));
    }
    return t;
  };
  for (Tensor* p : params) *p = read_matching(*p);
  if (r.u8() == 1) {
    TrainingState st;
    st.adam.config.learning_rate = r.f64();
    st.adam.config.beta1 = r.f64();
    st.adam.config.beta2 = r.f64();
    st.adam.config.epsilon = r.f64();
    st.adam.step = r.u64();
    st.completed_epochs = static_cast<int>(r.u32());
    for (const Tensor* p : params) st.adam.m.push_back(read_matching(*p));
    for (const Tensor* p : params) st.adam.v.push_back(read_matching(*p));
    ck.state = std::move(st);
  }
  if (!r.at_end()) throw FormatError("checkpoint file: trailing bytes");
  return ck;
}

void write_checkpoint(const Model<float>& model, const TrainingState* state, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(model, state));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

std::optional<TrainingState> load_checkpoint_into(Model<float>& model, const std::filesystem::path& path) {
  Checkpoint ck = read_checkpoint(path);
  if (!(ck.model.arch() == model.arch())) {
    throw ArchitectureMismatchError("checkpoint " + path.string() + " architecture:\n" + ck.model.arch().describe() +
                                    "does not match model architecture:\n" + model.arch().describe());
  }
  model = std::move(ck.model);
  return std::move(ck.state);
}

// -------------------------------------------------------------------- files

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading '" + path.string() + "'");
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------- CSV

void write_history_csv(std::ostream& os, std::span<const EpochRecord> history) {
  os << "epoch,train_total,train_base,train_exp,val_total,val_base_acc,val_exp_acc\n";
  for (const EpochRecord& r : history) {
    os << r.epoch << ',' << format_number(r.train_total) << ',' << format_number(r.train_base) << ','
       << format_number(r.train_exp) << ',' << format_number(r.val_total) << ',' << format_number(r.val_base_acc)
       << ',' << format_number(r.val_exp_acc) << '\n';
  }
}

void write_sweep_csv(std::ostream& os, SweepAttribute attr, std::span<const SweepRow> rows) {
  os << "attr,level,base_acc,exp_acc,joint_acc,mean_loss\n";
  for (const SweepRow& r : rows) {
    os << to_string(attr) << ',' << format_number(r.level) << ',' << format_number(r.report.base_accuracy) << ','
       << format_number(r.report.exp_accuracy) << ',' << format_number(r.report.joint_accuracy) << ','
       << format_number(r.report.mean_loss) << '\n';
  }
}

void write_histogram_csv(std::ostream& os, std::span<const HistogramBucket> buckets, bool categorical) {
  os << "bucket,count\n";
  for (const HistogramBucket& b : buckets) {
    if (categorical) {
      os << format_number(b.lo);
    } else {
      os << format_number(b.lo) << ':' << format_number(b.hi);
    }
    os << ',' << b.count << '\n';
  }
}

void write_report_csv(std::ostream& os, const EvalReport& report) {
  os << "count,base_acc,exp_acc,joint_acc,mean_loss\n";
  os << report.count << ',' << format_number(report.base_accuracy) << ',' << format_number(report.exp_accuracy) << ','
     << format_number(report.joint_accuracy) << ',' << format_number(report.mean_loss) << '\n';
}

void write_confusion_csv(std::ostream& os, const EvalReport& report) {
  os << "head,true,predicted,count\n";
  auto emit = [&](const char* head, const ConfusionMatrix& m) {
    for (std::size_t t = 0; t < m.size(); ++t) {
      for (std::size_t p = 0; p < m[t].size(); ++p) os << head << ',' << t << ',' << p << ',' << m[t][p] << '\n';
    }
  };
  emit("base", report.base_confusion);
  emit("exponent", report.exp_confusion);
}

}  // namespace expocnn
