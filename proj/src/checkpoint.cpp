// SPDX-License-Identifier: Apache-2.0
#include "sgt/checkpoint.hpp"

#include <zlib.h>

#include <array>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sgt {

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'G', 'T', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    buf_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    buf_ += s;
  }
  void ints(const std::vector<int>& v) {
    pod<std::uint64_t>(v.size());
    for (int x : v) pod<std::int32_t>(x);
  }
  void doubles(const std::vector<double>& v) {
    pod<std::uint64_t>(v.size());
    for (double x : v) pod(x);
  }
  void matrix(const Matrix<float>& m) {
    pod<std::int64_t>(m.rows());
    pod<std::int64_t>(m.cols());
    buf_.append(reinterpret_cast<const char*>(m.data()), sizeof(float) * static_cast<std::size_t>(m.size()));
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  template <typename T>
  T pod() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::vector<int> ints() {
    const auto n = pod<std::uint64_t>();
    need(n * 4);
    std::vector<int> v(n);
    for (auto& x : v) x = pod<std::int32_t>();
    return v;
  }
  std::vector<double> doubles() {
    const auto n = pod<std::uint64_t>();
    need(n * 8);
    std::vector<double> v(n);
    for (auto& x : v) x = pod<double>();
    return v;
  }
  void matrix(Matrix<float>& m) {
    const auto r = pod<std::int64_t>();
    const auto c = pod<std::int64_t>();
    if (r != m.rows() || c != m.cols()) throw CheckpointError("checkpoint: parameter shape mismatch");
    need(sizeof(float) * static_cast<std::size_t>(r * c));
    std::memcpy(m.data(), data_.data() + pos_, sizeof(float) * static_cast<std::size_t>(r * c));
    pos_ += sizeof(float) * static_cast<std::size_t>(r * c);
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw CheckpointError("checkpoint: truncated payload");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

void write_plan(Writer& w, const LoopPlan& plan) {
  w.pod<std::uint64_t>(plan.size());
  for (const auto& d : plan) {
    w.pod<std::int32_t>(static_cast<std::int32_t>(d.mode));
    w.ints(d.heads);
    w.pod<std::int32_t>(d.depth);
  }
}

LoopPlan read_plan(Reader& r) {
  LoopPlan plan(r.pod<std::uint64_t>());
  for (auto& d : plan) {
    const auto mode = r.pod<std::int32_t>();
    if (mode < 0 || mode > 3) throw CheckpointError("checkpoint: bad loop mode");
    d.mode = static_cast<LoopDirective::Mode>(mode);
    d.heads = r.ints();
    d.depth = r.pod<std::int32_t>();
  }
  return plan;
}

void write_window(Writer& w, const EntropyWindow& win) {
  w.pod<std::int64_t>(win.count());
  w.doubles(win.sums());
}

void read_window(Reader& r, EntropyWindow& win) {
  const auto count = r.pod<std::int64_t>();
  win.restore(r.doubles(), count);
}

std::uint32_t crc(const std::string& payload) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
}

}  // namespace

std::string encode_checkpoint(const TrainerState& s, std::uint32_t version) {
  Writer w;
  w.str(s.config.to_text());
  w.pod<std::int64_t>(s.step);
  w.ints(s.arch.active);
  w.pod<std::int32_t>(s.arch.growing ? *s.arch.growing : -1);
  w.ints(s.arch.depth);
  w.pod<std::uint64_t>(s.arch.heads.size());
  for (const auto& h : s.arch.heads) w.ints(h);
  write_plan(w, s.fixed_plan);
  w.ints(s.stage_pool);
  write_window(w, s.window);
  write_window(w, s.log_window);
  w.pod(s.ledger.per_step());
  w.pod(s.ledger.cumulative());
  w.pod<std::int64_t>(s.ledger.steps());
  w.pod<std::int64_t>(s.ledger.changes());
  w.pod<std::int64_t>(s.adam.t);
  for (const auto* store : {&s.params, &s.adam.m, &s.adam.v}) {
    visit_weights(*store, [&w](const std::string&, const Matrix<float>& m) { w.matrix(m); });
  }
  const std::string& payload = w.bytes();
  Writer out;
  std::string head(kMagic.data(), kMagic.size());
  out.pod(version);
  out.pod<std::uint64_t>(payload.size());
  std::string bytes = head + out.bytes() + payload;
  const std::uint32_t c = crc(payload);
  bytes.append(reinterpret_cast<const char*>(&c), sizeof c);
  return bytes;
}

TrainerState decode_checkpoint(const std::string& bytes) {
  constexpr std::size_t header = 8 + 4 + 8;
  if (bytes.size() < header + 4 || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw CheckpointError("checkpoint: bad magic");
  }
  Reader h(std::string_view(bytes).substr(8, 12));
  const auto version = h.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: format version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto length = h.pod<std::uint64_t>();
  if (bytes.size() != header + length + 4) throw CheckpointError("checkpoint: length mismatch");
  const std::string payload = bytes.substr(header, length);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + header + length, sizeof stored);
  if (stored != crc(payload)) throw CheckpointError("checkpoint: checksum mismatch (corrupt file)");

  Reader r(payload);
  TrainerState s = init_trainer(TrainRunConfig::from_text(r.str()));
  s.step = r.pod<std::int64_t>();
  s.arch.active = r.ints();
  const auto growing = r.pod<std::int32_t>();
  if (growing >= 0) s.arch.growing = growing; else s.arch.growing.reset();
  s.arch.depth = r.ints();
  s.arch.heads.resize(r.pod<std::uint64_t>());
  for (auto& hs : s.arch.heads) hs = r.ints();
  s.fixed_plan = read_plan(r);
  s.stage_pool = r.ints();
  read_window(r, s.window);
  read_window(r, s.log_window);
  const double per_step = r.pod<double>();
  const double cumulative = r.pod<double>();
  const auto steps = r.pod<std::int64_t>();
  const auto changes = r.pod<std::int64_t>();
  s.ledger.restore(per_step, cumulative, steps, changes);
  s.adam.t = r.pod<std::int64_t>();
  for (auto* store : {&s.params, &s.adam.m, &s.adam.v}) {
    visit_weights(*store, [&r](const std::string&, Matrix<float>& m) { r.matrix(m); });
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");
  if (s.arch.n_layer() != s.config.model.n_layer || static_cast<int>(s.fixed_plan.size()) != s.config.model.n_layer) {
    throw CheckpointError("checkpoint: state does not match model config");
  }
  return s;
}

void save_checkpoint(const TrainerState& state, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(state);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint: " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

TrainerState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

bool states_equal(const TrainerState& a, const TrainerState& b) {
  return a.config == b.config && a.step == b.step && bit_identical(a.params, b.params) &&
         bit_identical(a.adam.m, b.adam.m) && bit_identical(a.adam.v, b.adam.v) && a.adam.t == b.adam.t &&
         a.arch == b.arch && a.fixed_plan == b.fixed_plan && a.stage_pool == b.stage_pool && a.window == b.window &&
         a.log_window == b.log_window && a.ledger == b.ledger;
}

}  // namespace sgt
