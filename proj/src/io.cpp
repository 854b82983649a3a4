#include "biharm/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <system_error>

#include "biharm/errors.hpp"

namespace biharm {

static_assert(std::endian::native == std::endian::little,
              "field files are written in host order, which must be little-endian");

namespace {

constexpr char kMagic[4] = {'B', 'H', 'F', '1'};
constexpr const char* kMetaPrefix = "# bhf1-meta: ";

[[noreturn]] void schema(const std::string& m) { throw Error(ErrorCode::SchemaError, m); }

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_raw(const void* data, std::size_t len) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + len);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

  template <class T>
  T get(const char* what) {
    T v;
    std::memcpy(&v, take(sizeof(T), what), sizeof(T));
    return v;
  }
  const std::uint8_t* take(std::size_t len, const char* what) {
    if (bytes_.size() - pos_ < len) schema(std::string("truncated field file while reading ") + what);
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += len;
    return p;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

// Flat index of every stored node within the full bounding grid.
std::vector<std::size_t> grid_positions(const LatticeDomain& d) {
  const int n = d.dim();
  std::vector<std::size_t> flat(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::size_t f = 0;
    for (int a = 0; a < n; ++a) f = f * static_cast<std::size_t>(d.extents()[a]) + d.grid_index(i, a);
    flat[i] = f;
  }
  return flat;
}

template <class T>
T required(const Json& j, const char* key) {
  if (!j.contains(key)) schema(std::string("missing key '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    schema(std::string("key '") + key + "' has the wrong type");
  }
}

DomainPtr rebuild(const Json& meta, int n, double h, std::span<const std::uint32_t> extents) {
  DomainSpec spec = domain_spec_from_json(meta);
  if (spec.dim != n) schema("domain description dimension differs from the header");
  auto d = std::make_shared<const LatticeDomain>(LatticeDomain::build(spec, h));
  for (int a = 0; a < n; ++a) {
    if (static_cast<std::uint32_t>(d->extents()[a]) != extents[a]) {
      schema("grid extents differ from the rebuilt lattice on axis " + std::to_string(a));
    }
  }
  return d;
}

std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    schema("malformed number '" + std::string(s) + "' in point dump");
  }
  return v;
}

}  // namespace

Json to_json(const DomainSpec& s) {
  Json j;
  j["shape"] = std::string(to_string(s.shape));
  j["dim"] = s.dim;
  switch (s.shape) {
    case ShapeKind::Ball:
      j["center"] = s.center;
      j["radius"] = s.radius;
      break;
    case ShapeKind::Annulus:
      j["center"] = s.center;
      j["r_inner"] = s.r_inner;
      j["r_outer"] = s.r_outer;
      break;
    case ShapeKind::Box:
      j["lo"] = s.lo;
      j["hi"] = s.hi;
      break;
    case ShapeKind::Dumbbell:
      j["cap_radius"] = s.cap_radius;
      j["neck_half_length"] = s.neck_half_length;
      break;
  }
  if (!s.grid_offset.empty()) j["grid_offset"] = s.grid_offset;
  return j;
}

DomainSpec domain_spec_from_json(const Json& j) {
  if (!j.is_object()) schema("domain description must be an object");
  DomainSpec s;
  s.shape = shape_from_string(required<std::string>(j, "shape"));
  s.dim = required<int>(j, "dim");
  switch (s.shape) {
    case ShapeKind::Ball:
      s.center = j.contains("center") ? required<std::vector<double>>(j, "center")
                                      : std::vector<double>(s.dim, 0.0);
      s.radius = required<double>(j, "radius");
      break;
    case ShapeKind::Annulus:
      s.center = j.contains("center") ? required<std::vector<double>>(j, "center")
                                      : std::vector<double>(s.dim, 0.0);
      s.r_inner = required<double>(j, "r_inner");
      s.r_outer = required<double>(j, "r_outer");
      break;
    case ShapeKind::Box:
      s.lo = required<std::vector<double>>(j, "lo");
      s.hi = required<std::vector<double>>(j, "hi");
      break;
    case ShapeKind::Dumbbell:
      s.cap_radius = required<double>(j, "cap_radius");
      s.neck_half_length = required<double>(j, "neck_half_length");
      break;
  }
  if (j.contains("grid_offset")) s.grid_offset = required<std::vector<double>>(j, "grid_offset");
  try {
    s.validate();
  } catch (const Error& e) {
    schema(std::string("invalid domain description: ") + e.what());
  }
  return s;
}

std::vector<std::uint8_t> encode_field(const VectorField& u) {
  const LatticeDomain& d = u.domain();
  const int n = d.dim();
  const int nc = u.ncomp();
  if (nc < 1 || nc > 256) throw Error(ErrorCode::InvalidArgument, "component count out of range");

  Writer w;
  w.put_raw(kMagic, 4);
  w.put<std::uint32_t>(kFieldFileVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(n));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(nc - 1));
  for (int a = 0; a < n; ++a) w.put<std::uint32_t>(static_cast<std::uint32_t>(d.extents()[a]));
  w.put<double>(d.spacing());
  const std::string meta = to_json(d.spec()).dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
  w.put_raw(meta.data(), meta.size());

  std::vector<double> payload(d.grid_size() * nc, std::numeric_limits<double>::quiet_NaN());
  const auto flat = grid_positions(d);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto v = u.at(i);
    std::copy(v.begin(), v.end(), payload.begin() + flat[i] * nc);
  }
  w.put_raw(payload.data(), payload.size() * sizeof(double));
  return std::move(w.bytes);
}

VectorField decode_field(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(4, "magic"), kMagic, 4) != 0) schema("not a field file (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kFieldFileVersion) schema("unsupported field file version " + std::to_string(version));
  const int n = r.get<std::uint8_t>("dimension");
  const int nc = r.get<std::uint8_t>("target degree") + 1;
  if (n < 2 || n > kMaxDim) schema("dimension out of range");
  std::vector<std::uint32_t> extents(n);
  for (auto& e : extents) e = r.get<std::uint32_t>("extents");
  const double h = r.get<double>("spacing");
  if (!(h > 0.0) || !std::isfinite(h)) schema("spacing must be positive");
  const auto meta_len = r.get<std::uint32_t>("description length");
  const auto* meta_bytes = r.take(meta_len, "domain description");
  Json meta;
  try {
    meta = Json::parse(reinterpret_cast<const char*>(meta_bytes),
                       reinterpret_cast<const char*>(meta_bytes) + meta_len);
  } catch (const nlohmann::json::exception&) {
    schema("domain description is not valid JSON");
  }

  std::size_t cells = 1;
  for (auto e : extents) cells *= e;
  if (r.remaining() != cells * nc * sizeof(double)) {
    schema("payload holds " + std::to_string(r.remaining()) + " bytes, expected " +
           std::to_string(cells * nc * sizeof(double)));
  }
  DomainPtr d = rebuild(meta, n, h, extents);
  std::vector<double> payload(cells * nc);
  std::memcpy(payload.data(), r.take(payload.size() * sizeof(double), "payload"),
              payload.size() * sizeof(double));

  std::vector<std::uint8_t> stored(cells, 0);
  const auto flat = grid_positions(*d);
  std::vector<double> values(d->size() * nc);
  for (std::size_t i = 0; i < d->size(); ++i) {
    stored[flat[i]] = 1;
    // Stored nodes may hold NaN too (e.g. potentials undefined off their graph).
    std::copy_n(payload.begin() + flat[i] * nc, nc, values.begin() + i * nc);
  }
  for (std::size_t f = 0; f < cells; ++f) {
    if (stored[f]) continue;
    for (int c = 0; c < nc; ++c) {
      // Only the canonical quiet NaN keeps write(read(bytes)) byte-identical.
      const double v = payload[f * nc + c];
      if (std::bit_cast<std::uint64_t>(v) !=
          std::bit_cast<std::uint64_t>(std::numeric_limits<double>::quiet_NaN())) {
        schema("exterior grid entry " + std::to_string(f) + " is not the canonical NaN");
      }
    }
  }
  return VectorField(std::move(d), nc, std::move(values));
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoError, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot rename into " + path.string() + ": " + ec.message());
}

void write_atomic(const std::filesystem::path& path, const std::string& text) {
  write_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void save_field(const std::filesystem::path& path, const VectorField& u) {
  write_atomic(path, encode_field(u));
}

VectorField load_field(const std::filesystem::path& path) { return decode_field(read_bytes(path)); }

void write_points_csv(std::ostream& os, const VectorField& u) {
  const LatticeDomain& d = u.domain();
  const int n = d.dim();
  Json meta;
  meta["domain"] = to_json(d.spec());
  meta["spacing"] = d.spacing();
  meta["components"] = u.ncomp();
  meta["nodes"] = d.size();
  os << kMetaPrefix << meta.dump() << '\n';
  for (int a = 0; a < n; ++a) os << 'x' << a + 1 << ',';
  for (int c = 0; c < u.ncomp(); ++c) os << 'u' << c + 1 << (c + 1 < u.ncomp() ? "," : "\n");
  std::vector<double> x(n);
  for (std::size_t i = 0; i < d.size(); ++i) {
    d.position(i, x);
    for (double v : x) os << format_double(v) << ',';
    const auto v = u.at(i);
    for (int c = 0; c < u.ncomp(); ++c) os << format_double(v[c]) << (c + 1 < u.ncomp() ? "," : "\n");
  }
}

VectorField read_points_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind(kMetaPrefix, 0) != 0) {
    schema("point dump must start with a '# bhf1-meta:' line");
  }
  Json meta;
  try {
    meta = Json::parse(line.substr(std::strlen(kMetaPrefix)));
  } catch (const nlohmann::json::exception&) {
    schema("point dump metadata is not valid JSON");
  }
  if (!meta.contains("domain")) schema("missing key 'domain'");
  const DomainSpec spec = domain_spec_from_json(meta["domain"]);
  const double h = required<double>(meta, "spacing");
  const int nc = required<int>(meta, "components");
  if (nc < 1) schema("component count must be positive");
  auto d = std::make_shared<const LatticeDomain>(LatticeDomain::build(spec, h));
  const int n = d->dim();
  if (!std::getline(is, line)) schema("point dump lacks a column header");

  std::vector<double> values(d->size() * nc, 0.0);
  std::vector<std::uint8_t> seen(d->size(), 0);
  std::size_t rows = 0;
  std::vector<double> cols;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    cols.clear();
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      cols.push_back(parse_double(std::string_view(line).substr(start, comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (static_cast<int>(cols.size()) != n + nc) {
      schema("row " + std::to_string(rows + 1) + " has " + std::to_string(cols.size()) + " columns");
    }
    GridIndex g{};
    std::vector<double> x(cols.begin(), cols.begin() + n);
    // Positions are exact grid coordinates, so rounding recovers the index.
    std::vector<double> shifted(n);
    for (int a = 0; a < n; ++a) shifted[a] = x[a] + 0.5 * h;
    g = d->cell_of(shifted);
    const auto node = d->find(g);
    if (!node) schema("row " + std::to_string(rows + 1) + " is not a stored lattice node");
    if (seen[*node]++) schema("node listed twice in point dump");
    std::copy(cols.begin() + n, cols.end(), values.begin() + *node * nc);
    ++rows;
  }
  if (rows != d->size()) {
    schema("point dump has " + std::to_string(rows) + " rows, lattice has " + std::to_string(d->size()));
  }
  return VectorField(std::move(d), nc, std::move(values));
}

}  // namespace biharm
