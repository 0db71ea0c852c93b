#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msacl/dataset.hpp"
#include "msacl/rng.hpp"
#include "msacl/types.hpp"

namespace msacl {

enum class FieldKind { one_hot, multi_hot, dense, scalar };

const char* to_string(FieldKind k);

struct FieldSpec {
  std::string name;
  FieldKind kind;
  int size = 0;    // cardinality for (multi-)one-hot, dim for dense/scalar
  int offset = 0;  // start of the segment in the encoded vector

  bool operator==(const FieldSpec&) const = default;
};

/// Ordered field layout of an encoded input vector. Derived
/// deterministically from the dataset header: categorical fields in
/// declaration order, then multi-hot, then dense blocks, then scalars.
/// Fields absent from the header are skipped; declared-but-empty fields
/// are a schema error.
struct FeatureSchema {
  std::vector<FieldSpec> fields;
  int width = 0;
  std::uint64_t id = 0;  // hash of the JSON dump, used for compatibility checks

  std::string dump_json() const;

  bool operator==(const FeatureSchema&) const = default;
};

std::pair<FeatureSchema, FeatureSchema> build_schemas(const DatasetBundle& bundle);

struct EncodedVector {
  Vec values;
  std::uint64_t schema_id = 0;
};

EncodedVector encode_user(const FeatureSchema& schema, const UserRecord& record);
EncodedVector encode_episode(const FeatureSchema& schema,
                             const EpisodeRecord& record);

enum class DropoutGranularity { field, entry };

/// Zeroes whole fields (or single entries) independently with probability
/// p. Surviving values are left untouched: the result is an alternative
/// view of the input, not a rescaled activation.
EncodedVector feature_dropout(const EncodedVector& vec,
                              const FeatureSchema& schema, double p, Rng& rng,
                              DropoutGranularity granularity = DropoutGranularity::field);

/// In-place variant working on a raw row of schema width.
void feature_dropout_inplace(Vec& values, const FeatureSchema& schema, double p,
                             Rng& rng,
                             DropoutGranularity granularity = DropoutGranularity::field);

/// All records of a bundle encoded once, one row per record.
struct EncodedDataset {
  FeatureSchema user_schema;
  FeatureSchema episode_schema;
  Mat users;     // n_users x user width
  Mat episodes;  // n_episodes x episode width
};

EncodedDataset encode_dataset(const DatasetBundle& bundle);

}  // namespace msacl
