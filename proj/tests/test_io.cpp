#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <memory>
#include <sstream>

#include "biharm/errors.hpp"
#include "biharm/io.hpp"
#include "doctest.h"

using namespace biharm;
namespace fs = std::filesystem;

namespace {

DomainPtr make(const DomainSpec& s, double h) {
  return std::make_shared<const LatticeDomain>(LatticeDomain::build(s, h));
}

std::vector<DomainPtr> sample_domains() {
  return {
      make(DomainSpec::ball(3, {0.1, -0.2, 0.05}, 0.9).cell_centered(), 0.125),
      make(DomainSpec::annulus(4, {0.0, 0.0, 0.0, 0.0}, 0.3, 1.0).cell_centered(), 0.1),
      make(DomainSpec::box({-1.0, -0.5}, {1.0, 0.75}), 0.1),
      make(DomainSpec::dumbbell(1.0, 1.0).cell_centered(), 0.25),
  };
}

bool bitwise_equal(const VectorField& a, const VectorField& b) {
  if (a.values().size() != b.values().size()) return false;
  return std::memcmp(a.values().data(), b.values().data(), a.values().size() * sizeof(double)) == 0;
}

template <class Fn>
ErrorCode error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidArgument;
}

fs::path scratch_dir(const char* name) {
  const fs::path p = fs::temp_directory_path() / "biharm_test_io" / name;
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("domain descriptions round-trip through JSON") {
  for (const auto& d : sample_domains()) {
    const Json j = to_json(d->spec());
    const DomainSpec back = domain_spec_from_json(j);
    CHECK(to_json(back) == j);
    const auto rebuilt = LatticeDomain::build(back, d->spacing());
    CHECK(rebuilt.size() == d->size());
  }
  CHECK(error_code_of([] { domain_spec_from_json(Json{{"shape", "torus"}, {"dim", 3}}); }) ==
        ErrorCode::SchemaError);
  CHECK(error_code_of([] { domain_spec_from_json(Json{{"shape", "ball"}, {"dim", 3}}); }) ==
        ErrorCode::SchemaError);
  CHECK(error_code_of([] { domain_spec_from_json(Json::array()); }) == ErrorCode::SchemaError);
}

TEST_CASE("field files: encode, decode and re-encode are byte identical") {
  std::uint64_t seed = 3;
  for (const auto& d : sample_domains()) {
    const VectorField u = smooth_random_field(d, d->dim() - 1, seed++);
    const auto bytes = encode_field(u);
    REQUIRE(bytes.size() > 4);
    CHECK(std::memcmp(bytes.data(), "BHF1", 4) == 0);
    std::uint32_t version = 0;
    std::memcpy(&version, bytes.data() + 4, 4);
    CHECK(version == kFieldFileVersion);

    const VectorField v = decode_field(bytes);
    CHECK(v.domain().size() == d->size());
    CHECK(v.domain().spacing() == d->spacing());
    CHECK(v.ncomp() == u.ncomp());
    CHECK(bitwise_equal(u, v));
    CHECK(encode_field(v) == bytes);
  }
}

TEST_CASE("field files: NaN entries at stored nodes survive") {
  auto d = make(DomainSpec::box({0.0, 0.0}, {1.0, 1.0}), 0.25);
  VectorField u(d, 1);
  for (std::size_t i = 0; i < d->size(); ++i) u.at(i)[0] = static_cast<double>(i);
  u.at(3)[0] = std::numeric_limits<double>::quiet_NaN();
  const VectorField v = decode_field(encode_field(u));
  CHECK(std::isnan(v.at(3)[0]));
  CHECK(v.at(4)[0] == 4.0);
}

TEST_CASE("field files: corrupted input is rejected with a schema error") {
  auto d = make(DomainSpec::ball(3, {0.0, 0.0, 0.0}, 1.0), 0.25);
  const auto bytes = encode_field(smooth_random_field(d, 2, 7));

  SUBCASE("truncated") {
    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{11}, bytes.size() / 2,
                            bytes.size() - 1}) {
      const std::span<const std::uint8_t> head(bytes.data(), cut);
      CHECK(error_code_of([&] { decode_field(head); }) == ErrorCode::SchemaError);
    }
  }
  SUBCASE("trailing bytes") {
    auto b = bytes;
    b.push_back(0);
    CHECK(error_code_of([&] { decode_field(b); }) == ErrorCode::SchemaError);
  }
  SUBCASE("bad magic") {
    auto b = bytes;
    b[0] = 'X';
    CHECK(error_code_of([&] { decode_field(b); }) == ErrorCode::SchemaError);
  }
  SUBCASE("unknown version") {
    auto b = bytes;
    b[4] = 99;
    CHECK(error_code_of([&] { decode_field(b); }) == ErrorCode::SchemaError);
  }
  SUBCASE("finite value at an exterior node") {
    // The cube corners lie outside the ball, so the payload holds canonical
    // NaNs; overwrite the first one.
    const auto nan_bits = std::bit_cast<std::uint64_t>(std::numeric_limits<double>::quiet_NaN());
    auto b = bytes;
    bool replaced = false;
    for (std::size_t off = b.size() % 8; off + 8 <= b.size(); off += 8) {
      std::uint64_t w = 0;
      std::memcpy(&w, b.data() + off, 8);
      if (w == nan_bits) {
        const double zero = 0.0;
        std::memcpy(b.data() + off, &zero, 8);
        replaced = true;
        break;
      }
    }
    REQUIRE(replaced);
    CHECK(error_code_of([&] { decode_field(b); }) == ErrorCode::SchemaError);
  }
}

TEST_CASE("point dumps round-trip exactly") {
  std::uint64_t seed = 11;
  for (const auto& d : sample_domains()) {
    const VectorField u = smooth_random_field(d, d->dim() - 1, seed++);
    std::ostringstream os;
    write_points_csv(os, u);
    std::istringstream is(os.str());
    const VectorField v = read_points_csv(is);
    CHECK(bitwise_equal(u, v));
    CHECK(encode_field(v) == encode_field(u));
  }
}

TEST_CASE("point dumps: malformed input is rejected") {
  auto d = make(DomainSpec::box({0.0, 0.0}, {2.0, 2.0}), 0.25);
  VectorField u(d, 2);
  std::ostringstream os;
  write_points_csv(os, u);
  const std::string text = os.str();
  const auto first_row = text.find('\n', text.find('\n') + 1) + 1;

  auto reject = [](const std::string& s) {
    std::istringstream is(s);
    return error_code_of([&] { read_points_csv(is); });
  };
  CHECK(reject("x1,x2,u1,u2\n") == ErrorCode::SchemaError);
  CHECK(reject("# bhf1-meta: {not json\n") == ErrorCode::SchemaError);
  // Missing last row.
  CHECK(reject(text.substr(0, text.rfind('\n', text.size() - 2) + 1)) == ErrorCode::SchemaError);
  // Duplicated row.
  const std::string row = text.substr(first_row, text.find('\n', first_row) + 1 - first_row);
  CHECK(reject(text + row) == ErrorCode::SchemaError);
  // Wrong column count.
  CHECK(reject(text.substr(0, first_row) + "0,0\n") == ErrorCode::SchemaError);
}

TEST_CASE("atomic writes create directories and files read back") {
  const fs::path dir = scratch_dir("atomic");
  const fs::path file = dir / "nested" / "field.bhf1";
  auto d = make(DomainSpec::ball(2, {0.0, 0.0}, 1.0), 0.2);
  const VectorField u = smooth_random_field(d, 1, 5);
  save_field(file, u);
  CHECK(fs::exists(file));
  CHECK(bitwise_equal(load_field(file), u));
  CHECK(read_bytes(file) == encode_field(u));

  write_atomic(dir / "note.txt", std::string("hello\n"));
  const auto text = read_bytes(dir / "note.txt");
  CHECK(std::string(text.begin(), text.end()) == "hello\n");
  // No temporary siblings are left behind.
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++entries;
  CHECK(entries == 2);

  CHECK(error_code_of([&] { load_field(dir / "missing.bhf1"); }) == ErrorCode::IoError);
  fs::remove_all(dir);
}
