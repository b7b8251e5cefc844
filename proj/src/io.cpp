#include "ikno/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "ikno/error.hpp"

namespace ikno {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void to_le_bytes(double v, unsigned char* out) {
  std::uint64_t u;
  std::memcpy(&u, &v, sizeof u);
  for (int b = 0; b < 8; ++b) out[b] = static_cast<unsigned char>(u >> (8 * b));
}

double from_le_bytes(const unsigned char* in) {
  std::uint64_t u = 0;
  for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(in[b]) << (8 * b);
  double v;
  std::memcpy(&v, &u, sizeof v);
  return v;
}

std::vector<unsigned char> le_image(std::span<const double> values) {
  std::vector<unsigned char> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) to_le_bytes(values[i], bytes.data() + 8 * i);
  return bytes;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw Error(Errc::Io, "cannot write " + file.string());
  os << text;
}

std::size_t shape_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string safe_file(const std::string& name) {
  std::string f = name;
  for (auto& ch : f)
    if (ch == '/' || ch == '\\') ch = '_';
  return f + ".f64le";
}

}  // namespace

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t checksum_f64(std::span<const double> values) { return fnv1a64(le_image(values)); }

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xf];
  return s;
}

void write_f64le(const fs::path& file, std::span<const double> values) {
  const auto bytes = le_image(values);
  std::ofstream os(file, std::ios::binary);
  if (!os) throw Error(Errc::Io, "cannot write " + file.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error(Errc::Io, "short write to " + file.string());
}

std::vector<double> read_f64le(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw Error(Errc::Io, "cannot read " + file.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() % 8 != 0) throw Error(Errc::Io, file.string() + " is not a whole number of doubles");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = from_le_bytes(bytes.data() + 8 * i);
  return out;
}

// ---------------------------------------------------------------------------

BundleWriter::BundleWriter(fs::path dir, std::string kind) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw Error(Errc::Io, "cannot create " + dir_.string() + ": " + ec.message());
  meta_["format_version"] = kFormatVersion;
  meta_["kind"] = std::move(kind);
}

void BundleWriter::add(const std::string& name, std::vector<std::size_t> shape,
                       std::span<const double> values) {
  require(shape_count(shape) == values.size(), Errc::ShapeMismatch,
          "array " + name + " does not match its shape");
  const std::string file = safe_file(name);
  write_f64le(dir_ / file, values);
  const std::uint64_t sum = checksum_f64(values);
  sums_.push_back(sum);
  arrays_.push_back(json{{"name", name}, {"file", file}, {"shape", shape}, {"fnv1a64", hex64(sum)}});
}

std::uint64_t BundleWriter::finish() {
  std::vector<unsigned char> bytes;
  for (auto s : sums_)
    for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<unsigned char>(s >> (8 * b)));
  const std::uint64_t total = fnv1a64(bytes);
  meta_["arrays"] = arrays_;
  meta_["checksum"] = hex64(total);
  write_text(dir_ / "manifest.json", meta_.dump(2) + "\n");
  return total;
}

BundleReader::BundleReader(fs::path dir, const std::string& expected_kind) : dir_(std::move(dir)) {
  const fs::path file = dir_ / "manifest.json";
  std::ifstream is(file);
  if (!is) throw Error(Errc::Io, "missing " + file.string());
  try {
    meta_ = json::parse(is);
  } catch (const json::exception& e) {
    throw Error(Errc::Io, file.string() + ": " + e.what());
  }
  if (meta_.value("format_version", 0) != kFormatVersion)
    throw Error(Errc::Io, file.string() + ": unsupported format_version");
  const std::string kind = meta_.value("kind", "");
  if (!expected_kind.empty() && kind != expected_kind)
    throw Error(Errc::Io, file.string() + ": expected kind " + expected_kind + ", found " + kind);
}

const json& BundleReader::entry(const std::string& name) const {
  for (const auto& a : meta_.at("arrays"))
    if (a.at("name") == name) return a;
  throw Error(Errc::Io, "array " + name + " not in " + dir_.string());
}

bool BundleReader::has(const std::string& name) const {
  for (const auto& a : meta_.at("arrays"))
    if (a.at("name") == name) return true;
  return false;
}

std::vector<std::size_t> BundleReader::shape(const std::string& name) const {
  return entry(name).at("shape").get<std::vector<std::size_t>>();
}

std::vector<double> BundleReader::read(const std::string& name) const {
  const json& e = entry(name);
  auto values = read_f64le(dir_ / e.at("file").get<std::string>());
  if (values.size() != shape_count(e.at("shape").get<std::vector<std::size_t>>()))
    throw Error(Errc::Io, "array " + name + " has the wrong length");
  if (hex64(checksum_f64(values)) != e.at("fnv1a64").get<std::string>())
    throw Error(Errc::Io, "checksum mismatch in array " + name);
  return values;
}

DenseMatrix BundleReader::read_matrix(const std::string& name) const {
  const auto s = shape(name);
  if (s.size() != 2) throw Error(Errc::Io, "array " + name + " is not a matrix");
  return DenseMatrix(s[0], s[1], read(name));
}

// ---------------------------------------------------------------------------
// datasets: per split, samples are concatenated row-wise with count arrays

namespace {

void add_split(BundleWriter& w, const std::string& split, const std::vector<SampleRecord>& samples,
               std::size_t dim, std::size_t cin, std::size_t cout) {
  std::vector<double> in_counts, q_counts, in_coords, in_values, q_coords, target, times;
  bool temporal = !samples.empty() && samples.front().time.has_value();
  for (const auto& s : samples) {
    require(s.input.dim == dim && s.queries.dim == dim, Errc::DimMismatch,
            "sample dimension does not match dataset");
    require(s.input.channels == cin && s.target.cols() == cout, Errc::ChannelMismatch,
            "sample channels do not match dataset");
    in_counts.push_back(static_cast<double>(s.input.size()));
    q_counts.push_back(static_cast<double>(s.queries.size()));
    in_coords.insert(in_coords.end(), s.input.coords.begin(), s.input.coords.end());
    in_values.insert(in_values.end(), s.input.values.begin(), s.input.values.end());
    q_coords.insert(q_coords.end(), s.queries.coords.begin(), s.queries.coords.end());
    target.insert(target.end(), s.target.values().begin(), s.target.values().end());
    if (temporal) {
      require(s.time.has_value(), Errc::InvalidArgument, "mixed temporal and static samples");
      times.push_back(s.time->t_now);
      times.push_back(s.time->tau);
    }
  }
  const std::size_t ns = samples.size();
  w.add(split + ".input_counts", {ns}, in_counts);
  w.add(split + ".query_counts", {ns}, q_counts);
  w.add(split + ".input_coords", {in_coords.size() / std::max<std::size_t>(dim, 1), dim}, in_coords);
  w.add(split + ".input_values", {in_coords.size() / std::max<std::size_t>(dim, 1), cin}, in_values);
  w.add(split + ".query_coords", {q_coords.size() / std::max<std::size_t>(dim, 1), dim}, q_coords);
  w.add(split + ".target", {q_coords.size() / std::max<std::size_t>(dim, 1), cout}, target);
  if (temporal) w.add(split + ".time", {ns, 2}, times);
}

std::vector<SampleRecord> read_split(const BundleReader& r, const std::string& split, std::size_t dim,
                                     std::size_t cin, std::size_t cout) {
  const auto in_counts = r.read(split + ".input_counts");
  const auto q_counts = r.read(split + ".query_counts");
  const auto in_coords = r.read(split + ".input_coords");
  const auto in_values = r.read(split + ".input_values");
  const auto q_coords = r.read(split + ".query_coords");
  const auto target = r.read(split + ".target");
  std::vector<double> times;
  if (r.has(split + ".time")) times = r.read(split + ".time");
  std::vector<SampleRecord> out;
  std::size_t io = 0, qo = 0;
  for (std::size_t s = 0; s < in_counts.size(); ++s) {
    const auto ni = static_cast<std::size_t>(in_counts[s]);
    const auto nq = static_cast<std::size_t>(q_counts[s]);
    if ((io + ni) * dim > in_coords.size() || (qo + nq) * dim > q_coords.size())
      throw Error(Errc::Io, "sample counts exceed the stored arrays");
    SampleRecord rec;
    rec.input = PointCloud(dim,
                           std::vector<double>(in_coords.begin() + static_cast<long>(io * dim),
                                               in_coords.begin() + static_cast<long>((io + ni) * dim)),
                           cin,
                           std::vector<double>(in_values.begin() + static_cast<long>(io * cin),
                                               in_values.begin() + static_cast<long>((io + ni) * cin)));
    rec.queries = PointCloud(dim, std::vector<double>(q_coords.begin() + static_cast<long>(qo * dim),
                                                      q_coords.begin() + static_cast<long>((qo + nq) * dim)));
    rec.target = DenseMatrix(nq, cout,
                             std::vector<double>(target.begin() + static_cast<long>(qo * cout),
                                                 target.begin() + static_cast<long>((qo + nq) * cout)));
    if (!times.empty()) rec.time = TemporalInfo{times[2 * s], times[2 * s + 1]};
    io += ni;
    qo += nq;
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace

std::uint64_t save_dataset(const Dataset& data, const fs::path& dir) {
  BundleWriter w(dir, data.kind);
  auto& m = w.meta();
  m["dim"] = data.dim;
  m["seed"] = data.seed;
  m["counts"] = json{{"train", data.train.size()}, {"test", data.test.size()}};
  m["condition_names"] = data.condition_names;
  m["target_names"] = data.target_names;
  m["spec"] = json::parse(data.spec_json);
  add_split(w, "train", data.train, data.dim, data.condition_channels(), data.target_channels());
  add_split(w, "test", data.test, data.dim, data.condition_channels(), data.target_channels());
  return w.finish();
}

Dataset load_dataset(const fs::path& dir) {
  BundleReader r(dir, "");
  const auto& m = r.meta();
  if (!m.contains("counts")) throw Error(Errc::Io, dir.string() + " does not hold a dataset");
  Dataset d;
  try {
    d.kind = m.at("kind").get<std::string>();
    d.dim = m.at("dim").get<std::size_t>();
    d.seed = m.at("seed").get<std::uint64_t>();
    d.condition_names = m.at("condition_names").get<std::vector<std::string>>();
    d.target_names = m.at("target_names").get<std::vector<std::string>>();
    d.spec_json = m.at("spec").dump();
  } catch (const json::exception& e) {
    throw Error(Errc::Io, dir.string() + ": malformed dataset manifest: " + e.what());
  }
  d.train = read_split(r, "train", d.dim, d.condition_channels(), d.target_channels());
  d.test = read_split(r, "test", d.dim, d.condition_channels(), d.target_channels());
  return d;
}

// ---------------------------------------------------------------------------

namespace {

json segments_json(const ParamLayout& layout) {
  json segs = json::array();
  for (const auto& s : layout.segments())
    segs.push_back(json{{"name", s.name}, {"offset", s.offset}, {"length", s.length}});
  return segs;
}

ParamLayout layout_from(const json& segs) {
  ParamLayout layout;
  for (const auto& s : segs) layout.add(s.at("name").get<std::string>(), s.at("length").get<std::size_t>());
  return layout;
}

}  // namespace

void save_params(const ParamVector& params, const fs::path& dir, const json& extra) {
  BundleWriter w(dir, "params");
  w.meta()["segments"] = segments_json(params.layout);
  w.meta()["extra"] = extra;
  w.add("params", {params.values.size()}, params.values);
  w.finish();
}

ParamVector load_params(const fs::path& dir) {
  BundleReader r(dir, "params");
  ParamVector p;
  p.layout = layout_from(r.meta().at("segments"));
  p.values = r.read("params");
  if (p.values.size() != p.layout.size()) throw Error(Errc::Io, "parameter count does not match segments");
  return p;
}

void save_checkpoint(const Checkpoint& ck, const fs::path& dir) {
  BundleWriter w(dir, "checkpoint");
  w.meta()["segments"] = segments_json(ck.params.layout);
  w.meta()["step"] = ck.state.step;
  w.meta()["extra"] = ck.extra;
  const std::size_t n = ck.params.values.size();
  w.add("params", {n}, ck.params.values);
  std::vector<double> m = ck.state.m, v = ck.state.v;
  m.resize(n, 0.0);
  v.resize(n, 0.0);
  w.add("adam_m", {n}, m);
  w.add("adam_v", {n}, v);
  w.finish();
}

Checkpoint load_checkpoint(const fs::path& dir) {
  BundleReader r(dir, "checkpoint");
  Checkpoint ck;
  ck.params.layout = layout_from(r.meta().at("segments"));
  ck.params.values = r.read("params");
  if (ck.params.values.size() != ck.params.layout.size())
    throw Error(Errc::Io, "parameter count does not match segments");
  ck.state.step = r.meta().at("step").get<std::size_t>();
  ck.state.m = r.read("adam_m");
  ck.state.v = r.read("adam_v");
  ck.extra = r.meta().value("extra", json::object());
  return ck;
}

void save_operator(const ResolventVanilla& op, const fs::path& dir) {
  BundleWriter w(dir, "operator-vanilla");
  w.meta()["axes"] = op.axis_eigs.size();
  const double alpha[1] = {op.alpha};
  w.add("alpha", {1}, alpha);
  for (std::size_t j = 0; j < op.axis_eigs.size(); ++j) {
    const auto& e = op.axis_eigs[j];
    w.add("axis" + std::to_string(j) + ".eigenvalues", {e.size()}, e.eigenvalues);
    w.add("axis" + std::to_string(j) + ".eigenvectors", {e.eigenvectors.rows(), e.eigenvectors.cols()},
          e.eigenvectors.values());
  }
  w.add("diag_weights", {op.diag_weights.size()}, op.diag_weights);
  w.finish();
}

void save_operator(const ResolventTP& op, const fs::path& dir) {
  BundleWriter w(dir, "operator-tp");
  w.meta()["axes"] = op.axis_inverses.size();
  const double alpha[1] = {op.alpha};
  w.add("alpha", {1}, alpha);
  for (std::size_t j = 0; j < op.axis_inverses.size(); ++j) {
    const auto& a = op.axis_inverses[j];
    w.add("axis" + std::to_string(j) + ".inverse", {a.rows(), a.cols()}, a.values());
  }
  w.finish();
}

ResolventVanilla load_vanilla_operator(const fs::path& dir) {
  BundleReader r(dir, "operator-vanilla");
  ResolventVanilla op;
  op.alpha = r.read("alpha").at(0);
  const auto axes = r.meta().at("axes").get<std::size_t>();
  for (std::size_t j = 0; j < axes; ++j) {
    SymEig e;
    e.eigenvalues = r.read("axis" + std::to_string(j) + ".eigenvalues");
    e.eigenvectors = r.read_matrix("axis" + std::to_string(j) + ".eigenvectors");
    op.axis_eigs.push_back(std::move(e));
  }
  op.diag_weights = r.read("diag_weights");
  return op;
}

ResolventTP load_tp_operator(const fs::path& dir) {
  BundleReader r(dir, "operator-tp");
  ResolventTP op;
  op.alpha = r.read("alpha").at(0);
  const auto axes = r.meta().at("axes").get<std::size_t>();
  for (std::size_t j = 0; j < axes; ++j)
    op.axis_inverses.push_back(r.read_matrix("axis" + std::to_string(j) + ".inverse"));
  return op;
}

}  // namespace ikno
