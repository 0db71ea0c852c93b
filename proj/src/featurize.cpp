#include "msacl/featurize.hpp"

#include <nlohmann/json.hpp>

#include "msacl/util.hpp"

namespace msacl {

using nlohmann::json;

const char* to_string(FieldKind k) {
  switch (k) {
    case FieldKind::one_hot:
      return "one_hot";
    case FieldKind::multi_hot:
      return "multi_hot";
    case FieldKind::dense:
      return "dense";
    case FieldKind::scalar:
      return "scalar";
  }
  return "?";
}

namespace {

struct SchemaBuilder {
  FeatureSchema schema;

  void add(const std::string& name, FieldKind kind, int size) {
    FieldSpec f;
    f.name = name;
    f.kind = kind;
    f.size = size;
    f.offset = schema.width;
    schema.width += size;
    schema.fields.push_back(std::move(f));
  }

  /// Adds a categorical field if the vocabulary declares it.
  void add_vocab(const Vocab& vocab, const std::string& key, FieldKind kind) {
    auto it = vocab.find(key);
    if (it == vocab.end()) return;
    if (it->second <= 0) {
      throw SchemaError("empty vocabulary for declared field \"" + key + "\"");
    }
    add(key, kind, it->second);
  }

  void add_dense(const std::map<std::string, int>& dims, const std::string& key,
                 const std::string& field_name, FieldKind kind) {
    auto it = dims.find(key);
    if (it == dims.end()) return;
    if (it->second <= 0) {
      throw SchemaError("empty dimension for declared field \"" + key + "\"");
    }
    add(field_name, kind, it->second);
  }

  FeatureSchema finish() {
    schema.id = fnv1a64(schema.dump_json());
    return std::move(schema);
  }
};

void set_one_hot(Vec& out, const FieldSpec& f, int value, const std::string& owner) {
  if (value < 0 || value >= f.size) {
    throw EncodingError("out-of-vocabulary id " + std::to_string(value) +
                        " for field \"" + f.name + "\" of " + owner);
  }
  out[f.offset + value] = 1.0;
}

void set_multi_hot(Vec& out, const FieldSpec& f, const std::vector<int>& values,
                   const std::string& owner) {
  for (int v : values) {
    if (v < 0 || v >= f.size) {
      throw EncodingError("out-of-vocabulary id " + std::to_string(v) +
                          " for field \"" + f.name + "\" of " + owner);
    }
    out[f.offset + v] = 1.0;
  }
}

void set_dense(Vec& out, const FieldSpec& f, const Vec& values,
               const std::string& owner) {
  if (static_cast<int>(values.size()) != f.size) {
    throw EncodingError("dense block \"" + f.name + "\" of " + owner + " has " +
                        std::to_string(values.size()) + " entries, schema wants " +
                        std::to_string(f.size));
  }
  out.segment(f.offset, f.size) = values;
}

}  // namespace

std::string FeatureSchema::dump_json() const {
  json j = json::array();
  for (const auto& f : fields) {
    j.push_back({{"name", f.name},
                 {"kind", to_string(f.kind)},
                 {"width", f.size},
                 {"offset", f.offset}});
  }
  return j.dump();
}

std::pair<FeatureSchema, FeatureSchema> build_schemas(const DatasetBundle& bundle) {
  const auto& vocab = bundle.vocab;
  const auto& dims = bundle.header.embedding_dims;

  SchemaBuilder user;
  user.add_vocab(vocab, "gender", FieldKind::one_hot);
  user.add_vocab(vocab, "age_bucket", FieldKind::one_hot);
  user.add_vocab(vocab, "country", FieldKind::one_hot);
  user.add_vocab(vocab, "language", FieldKind::one_hot);
  if (vocab.count("topic")) {
    if (vocab.at("topic") <= 0) {
      throw SchemaError("empty vocabulary for declared field \"topic\"");
    }
    user.add("liked_topics", FieldKind::multi_hot, vocab.at("topic"));
  }
  user.add_dense(dims, "user_cf", "cf_embedding", FieldKind::dense);
  user.add_dense(dims, "user_podcast", "podcast_embedding", FieldKind::dense);
  user.add_dense(dims, "user_avg_stream_time", "avg_stream_time",
                 FieldKind::scalar);

  SchemaBuilder episode;
  episode.add_vocab(vocab, "country", FieldKind::one_hot);
  if (vocab.count("topic")) {
    episode.add("topics", FieldKind::multi_hot, vocab.at("topic"));
  }
  episode.add_dense(dims, "episode_cf", "cf_embedding", FieldKind::dense);
  episode.add_dense(dims, "episode_content", "content_embedding", FieldKind::dense);
  episode.add_dense(dims, "episode_kg", "kg_embedding", FieldKind::dense);

  return {user.finish(), episode.finish()};
}

EncodedVector encode_user(const FeatureSchema& schema, const UserRecord& record) {
  const std::string owner = "user \"" + record.user_id + "\"";
  EncodedVector out;
  out.schema_id = schema.id;
  out.values = Vec::Zero(schema.width);
  for (const auto& f : schema.fields) {
    if (f.name == "gender") {
      set_one_hot(out.values, f, record.gender, owner);
    } else if (f.name == "age_bucket") {
      set_one_hot(out.values, f, record.age_bucket, owner);
    } else if (f.name == "country") {
      set_one_hot(out.values, f, record.country, owner);
    } else if (f.name == "language") {
      set_one_hot(out.values, f, record.language, owner);
    } else if (f.name == "liked_topics") {
      set_multi_hot(out.values, f, record.liked_topics, owner);
    } else if (f.name == "cf_embedding") {
      set_dense(out.values, f, record.cf_embedding, owner);
    } else if (f.name == "podcast_embedding") {
      set_dense(out.values, f, record.podcast_embedding, owner);
    } else if (f.name == "avg_stream_time") {
      out.values[f.offset] = record.avg_stream_time;
    } else {
      throw SchemaError("unknown user field \"" + f.name + "\"");
    }
  }
  return out;
}

EncodedVector encode_episode(const FeatureSchema& schema,
                             const EpisodeRecord& record) {
  const std::string owner = "episode \"" + record.episode_id + "\"";
  EncodedVector out;
  out.schema_id = schema.id;
  out.values = Vec::Zero(schema.width);
  for (const auto& f : schema.fields) {
    if (f.name == "country") {
      set_one_hot(out.values, f, record.country, owner);
    } else if (f.name == "topics") {
      set_multi_hot(out.values, f, record.topics, owner);
    } else if (f.name == "cf_embedding") {
      set_dense(out.values, f, record.cf_embedding, owner);
    } else if (f.name == "content_embedding") {
      set_dense(out.values, f, record.content_embedding, owner);
    } else if (f.name == "kg_embedding") {
      set_dense(out.values, f, record.kg_embedding, owner);
    } else {
      throw SchemaError("unknown episode field \"" + f.name + "\"");
    }
  }
  return out;
}

void feature_dropout_inplace(Vec& values, const FeatureSchema& schema, double p,
                             Rng& rng, DropoutGranularity granularity) {
  if (p < 0.0 || p > 1.0) {
    throw ArgumentError("dropout probability must lie in [0, 1]");
  }
  if (values.size() != schema.width) {
    throw ShapeError("encoded vector width does not match schema");
  }
  if (granularity == DropoutGranularity::field) {
    for (const auto& f : schema.fields) {
      if (rng.uniform() < p) values.segment(f.offset, f.size).setZero();
    }
  } else {
    for (Index i = 0; i < values.size(); ++i) {
      if (rng.uniform() < p) values[i] = 0.0;
    }
  }
}

EncodedVector feature_dropout(const EncodedVector& vec,
                              const FeatureSchema& schema, double p, Rng& rng,
                              DropoutGranularity granularity) {
  if (vec.schema_id != schema.id) {
    throw ShapeError("encoded vector was produced by a different schema");
  }
  EncodedVector out = vec;
  feature_dropout_inplace(out.values, schema, p, rng, granularity);
  return out;
}

EncodedDataset encode_dataset(const DatasetBundle& bundle) {
  EncodedDataset out;
  std::tie(out.user_schema, out.episode_schema) = build_schemas(bundle);
  out.users.resize(static_cast<Index>(bundle.users.size()), out.user_schema.width);
  for (std::size_t i = 0; i < bundle.users.size(); ++i) {
    out.users.row(static_cast<Index>(i)) =
        encode_user(out.user_schema, bundle.users[i]).values.transpose();
  }
  out.episodes.resize(static_cast<Index>(bundle.episodes.size()),
                      out.episode_schema.width);
  for (std::size_t i = 0; i < bundle.episodes.size(); ++i) {
    out.episodes.row(static_cast<Index>(i)) =
        encode_episode(out.episode_schema, bundle.episodes[i]).values.transpose();
  }
  return out;
}

}  // namespace msacl
