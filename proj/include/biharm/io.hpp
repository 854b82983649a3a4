#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "biharm/fields.hpp"
#include "json.hpp"

namespace biharm {

using Json = nlohmann::json;

inline constexpr std::uint32_t kFieldFileVersion = 1;

Json to_json(const DomainSpec& spec);
/// Throws SchemaError on missing or mistyped keys.
DomainSpec domain_spec_from_json(const Json& j);

/// Binary field file: magic "BHF1", u32 version, u8 dimension, u8 target
/// degree k (components - 1), u32 extent per axis, f64 spacing, u32-length
/// prefixed UTF-8 JSON domain description, then the full bounding grid in
/// lexicographic node-major order as little-endian f64 with k + 1 components
/// per node; exterior nodes hold NaN.
std::vector<std::uint8_t> encode_field(const VectorField& u);
/// Rebuilds the lattice from the embedded description. Throws SchemaError on
/// any inconsistency (magic, version, sizes, non-NaN exterior entries, ...).
VectorField decode_field(std::span<const std::uint8_t> bytes);

void save_field(const std::filesystem::path& path, const VectorField& u);
VectorField load_field(const std::filesystem::path& path);

/// Point dump: a "# bhf1-meta: {...}" header line with the lattice
/// description, a column header, then one row per stored node with the
/// coordinates and components printed round-trip exactly.
void write_points_csv(std::ostream& os, const VectorField& u);
VectorField read_points_csv(std::istream& is);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
/// Writes to a temporary sibling and renames it into place.
void write_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace biharm
