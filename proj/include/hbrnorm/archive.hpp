#ifndef HBRNORM_ARCHIVE_HPP
#define HBRNORM_ARCHIVE_HPP

#include <json.hpp>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hbrnorm/models.hpp"

namespace hbrnorm {

/// Self-describing container: a text magic line, a little-endian u64 byte
/// count, JSON metadata, then the raw little-endian doubles of every array
/// listed in the metadata.
struct Archive {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, std::vector<double>> arrays;
};

inline constexpr int archive_version = 1;
inline constexpr const char* archive_magic = "HBRNORM-ARCHIVE";

std::string serialize_archive(const Archive& a);
Archive deserialize_archive(const std::string& bytes);
void write_archive(const std::string& path, const Archive& a);
Archive read_archive(const std::string& path);
/// Throws ErrorCode::schema unless the archive holds `kind`.
void expect_kind(const Archive& a, const std::string& kind);

std::uint64_t fnv1a64(const std::string& bytes);

nlohmann::json prior_to_json(const Prior& p);
Prior prior_from_json(const nlohmann::json& j);
nlohmann::json spec_to_json(const ModelSpec& s);
ModelSpec spec_from_json(const nlohmann::json& j);
nlohmann::json standardizer_to_json(const Standardizer& s);
Standardizer standardizer_from_json(const nlohmann::json& j);
nlohmann::json layout_to_json(const ParamLayout& l);
ParamLayout layout_from_json(const nlohmann::json& j);

Archive model_to_archive(const FittedNormativeModel& m);
FittedNormativeModel model_from_archive(const Archive& a);
void save_model(const std::string& path, const FittedNormativeModel& m);
FittedNormativeModel load_model(const std::string& path);
/// Hash of the serialized model, used as provenance in hyperprior packs.
std::string model_hash(const FittedNormativeModel& m);

}  // namespace hbrnorm

#endif
