#include "msacl/tower.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "msacl/rng.hpp"

namespace msacl {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

TowerStack init_stack(int input_width, const std::vector<int>& dims, Rng& rng,
                      bool relu_head) {
  TowerStack tower;
  tower.relu_head = relu_head;
  int fan_in = input_width;
  for (int d : dims) {
    DenseLayer layer;
    layer.W.resize(fan_in, d);
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (Index i = 0; i < layer.W.rows(); ++i) {
      for (Index j = 0; j < layer.W.cols(); ++j) {
        layer.W(i, j) = scale * rng.normal();
      }
    }
    layer.b = Vec::Zero(d);
    tower.layers.push_back(std::move(layer));
    fan_in = d;
  }
  return tower;
}

}  // namespace

TowerParams init_params(int user_width, int episode_width,
                        const std::vector<int>& hidden_dims, std::uint64_t seed,
                        bool linear_head) {
  if (hidden_dims.empty()) throw ArgumentError("hidden_dims must be nonempty");
  if (user_width <= 0 || episode_width <= 0) {
    throw ArgumentError("tower input widths must be positive");
  }
  for (int d : hidden_dims) {
    if (d <= 0) throw ArgumentError("layer dimensions must be positive");
  }
  TowerParams params;
  Rng user_rng(derive_seed(seed, "init-user"));
  Rng episode_rng(derive_seed(seed, "init-episode"));
  params.user = init_stack(user_width, hidden_dims, user_rng, !linear_head);
  params.episode =
      init_stack(episode_width, hidden_dims, episode_rng, !linear_head);
  return params;
}

Mat tower_forward(const TowerStack& tower, const Mat& X, ForwardCache* cache) {
  if (tower.layers.empty()) throw StateError("tower has no layers");
  if (X.cols() != tower.input_width()) {
    throw ShapeError("input width " + std::to_string(X.cols()) +
                     " does not match tower input width " +
                     std::to_string(tower.input_width()));
  }
  if (cache) {
    cache->pre.clear();
    cache->act.clear();
    cache->act.push_back(X);
  }
  Mat a = X;
  const std::size_t L = tower.layers.size();
  for (std::size_t l = 0; l < L; ++l) {
    const auto& layer = tower.layers[l];
    Mat z = (a * layer.W).rowwise() + layer.b.transpose();
    const bool activate = tower.relu_head || l + 1 < L;
    a = activate ? relu(z).eval() : z;
    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->act.push_back(a);
    }
  }
  return a;
}

Vec tower_forward(const TowerStack& tower, const Vec& x) {
  Mat out = tower_forward(tower, Mat(x.transpose()), nullptr);
  return out.row(0).transpose();
}

Scalar score(const TowerParams& params, const Vec& user_vec,
             const Vec& episode_vec) {
  const Vec u = tower_forward(params.user, user_vec);
  const Vec e = tower_forward(params.episode, episode_vec);
  return u.dot(e);
}

void TowerGrads::setZero() {
  for (auto& g : dW) g.setZero();
  for (auto& g : db) g.setZero();
}

bool TowerGrads::allFinite() const {
  for (const auto& g : dW) {
    if (!g.allFinite()) return false;
  }
  for (const auto& g : db) {
    if (!g.allFinite()) return false;
  }
  return true;
}

TowerGrads make_zero_grads(const TowerStack& tower) {
  TowerGrads g;
  for (const auto& layer : tower.layers) {
    g.dW.push_back(Mat::Zero(layer.W.rows(), layer.W.cols()));
    g.db.push_back(Vec::Zero(layer.b.size()));
  }
  return g;
}

ParamGrads make_zero_grads(const TowerParams& params) {
  return {make_zero_grads(params.user), make_zero_grads(params.episode)};
}

Mat tower_backward(const TowerStack& tower, const ForwardCache& cache,
                   const Mat& dOut, TowerGrads& grads) {
  const std::size_t L = tower.layers.size();
  if (cache.pre.size() != L || cache.act.size() != L + 1) {
    throw StateError("forward cache missing or stale");
  }
  if (dOut.rows() != cache.act.back().rows() ||
      dOut.cols() != cache.act.back().cols()) {
    throw ShapeError("upstream gradient shape mismatch");
  }
  Mat grad = dOut;
  for (std::size_t l = L; l-- > 0;) {
    const bool activate = tower.relu_head || l + 1 < L;
    if (activate) {
      // ReLU'(z) with the subgradient at 0 chosen as 0.
      grad.array() *= (cache.pre[l].array() > 0.0).cast<Scalar>();
    }
    grads.dW[l].noalias() += cache.act[l].transpose() * grad;
    grads.db[l] += grad.colwise().sum().transpose();
    if (l > 0) grad = (grad * tower.layers[l].W.transpose()).eval();
  }
  return grad * tower.layers[0].W.transpose();
}

OptimizerState OptimizerState::create(const TowerParams& params,
                                      AdamConfig config) {
  OptimizerState s;
  s.config = config;
  s.m_user = make_zero_grads(params.user);
  s.v_user = make_zero_grads(params.user);
  s.m_episode = make_zero_grads(params.episode);
  s.v_episode = make_zero_grads(params.episode);
  return s;
}

namespace {

void adam_update(Mat& param, const Mat& grad, Mat& m, Mat& v,
                 const AdamConfig& cfg, double bc1, double bc2,
                 const std::string& name) {
  if (!grad.allFinite()) {
    throw NumericError("non-finite gradient for parameter " + name);
  }
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
  v.array() = cfg.beta2 * v.array() + (1.0 - cfg.beta2) * grad.array().square();
  const Mat m_hat = m / bc1;
  const Mat v_hat = v / bc2;
  param.array() -=
      cfg.learning_rate * m_hat.array() / (v_hat.array().sqrt() + cfg.epsilon);
}

void adam_update(Vec& param, const Vec& grad, Vec& m, Vec& v,
                 const AdamConfig& cfg, double bc1, double bc2,
                 const std::string& name) {
  if (!grad.allFinite()) {
    throw NumericError("non-finite gradient for parameter " + name);
  }
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
  v.array() = cfg.beta2 * v.array() + (1.0 - cfg.beta2) * grad.array().square();
  const Vec m_hat = m / bc1;
  const Vec v_hat = v / bc2;
  param.array() -=
      cfg.learning_rate * m_hat.array() / (v_hat.array().sqrt() + cfg.epsilon);
}

void adam_stack(TowerStack& tower, const TowerGrads& grads, TowerGrads& m,
                TowerGrads& v, const AdamConfig& cfg, double bc1, double bc2,
                const std::string& tag) {
  for (std::size_t l = 0; l < tower.layers.size(); ++l) {
    adam_update(tower.layers[l].W, grads.dW[l], m.dW[l], v.dW[l], cfg, bc1, bc2,
                tag + ".layer" + std::to_string(l) + ".W");
    adam_update(tower.layers[l].b, grads.db[l], m.db[l], v.db[l], cfg, bc1, bc2,
                tag + ".layer" + std::to_string(l) + ".b");
  }
}

}  // namespace

void optimizer_step(TowerParams& params, const ParamGrads& grads,
                    OptimizerState& state) {
  if (grads.user.dW.size() != params.user.layers.size() ||
      grads.episode.dW.size() != params.episode.layers.size()) {
    throw ShapeError("gradient structure does not match parameters");
  }
  ++state.step;
  const auto& cfg = state.config;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  adam_stack(params.user, grads.user, state.m_user, state.v_user, cfg, bc1, bc2,
             "user");
  adam_stack(params.episode, grads.episode, state.m_episode, state.v_episode,
             cfg, bc1, bc2, "episode");
}

// ---------------------------------------------------------------------------
// Checkpoint I/O. Layout: magic, version, schema hashes, config hash, seed,
// variant string, per-tower dims table, row-major little-endian f64 payloads,
// then the optimizer state if present.

namespace {

constexpr char kMagic[8] = {'M', 'S', 'T', 'T', 'C', 'K', 'P', 'T'};

void write_raw(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <class T>
void write_pod(std::ostream& out, T v) {
  write_raw(out, &v, sizeof(T));
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  write_raw(out, s.data(), s.size());
}

void write_matrix(std::ostream& out, const Mat& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      write_pod<double>(out, m(i, j));
    }
  }
}

void write_vector(std::ostream& out, const Vec& v) {
  for (Index i = 0; i < v.size(); ++i) write_pod<double>(out, v[i]);
}

void write_stack_dims(std::ostream& out, const TowerStack& t) {
  write_pod<std::uint8_t>(out, t.relu_head ? 1 : 0);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.layers.size()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.input_width()));
  for (const auto& l : t.layers) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(l.W.cols()));
  }
}

void write_stack_payload(std::ostream& out, const TowerStack& t) {
  for (const auto& l : t.layers) {
    write_matrix(out, l.W);
    write_vector(out, l.b);
  }
}

void write_grads(std::ostream& out, const TowerGrads& g) {
  for (const auto& m : g.dW) write_matrix(out, m);
  for (const auto& v : g.db) write_vector(out, v);
}

struct Reader {
  std::ifstream in;
  std::filesystem::path path;

  void read_raw(void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw IoError("truncated checkpoint file " + path.string());
  }

  template <class T>
  T read_pod() {
    T v;
    read_raw(&v, sizeof(T));
    return v;
  }

  std::string read_string() {
    const auto n = read_pod<std::uint32_t>();
    std::string s(n, '\0');
    read_raw(s.data(), n);
    return s;
  }

  Mat read_matrix(Index rows, Index cols) {
    Mat m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < cols; ++j) {
        m(i, j) = read_pod<double>();
      }
    }
    return m;
  }

  Vec read_vector(Index n) {
    Vec v(n);
    for (Index i = 0; i < n; ++i) v[i] = read_pod<double>();
    return v;
  }
};

TowerStack read_stack_dims(Reader& r, std::vector<std::pair<Index, Index>>& shapes) {
  TowerStack t;
  t.relu_head = r.read_pod<std::uint8_t>() != 0;
  const auto n_layers = r.read_pod<std::uint32_t>();
  Index fan_in = r.read_pod<std::uint32_t>();
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    const Index d = r.read_pod<std::uint32_t>();
    shapes.emplace_back(fan_in, d);
    t.layers.emplace_back();
    fan_in = d;
  }
  return t;
}

void read_stack_payload(Reader& r, TowerStack& t,
                        const std::vector<std::pair<Index, Index>>& shapes) {
  for (std::size_t l = 0; l < t.layers.size(); ++l) {
    t.layers[l].W = r.read_matrix(shapes[l].first, shapes[l].second);
    t.layers[l].b = r.read_vector(shapes[l].second);
  }
}

void read_grads_like(Reader& r, const TowerStack& t, TowerGrads& g) {
  g.dW.clear();
  g.db.clear();
  for (const auto& l : t.layers) {
    g.dW.push_back(r.read_matrix(l.W.rows(), l.W.cols()));
  }
  for (const auto& l : t.layers) {
    g.db.push_back(r.read_vector(l.b.size()));
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  write_raw(out, kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, ckpt.version);
  write_pod<std::uint64_t>(out, ckpt.user_schema_id);
  write_pod<std::uint64_t>(out, ckpt.episode_schema_id);
  write_pod<std::uint64_t>(out, ckpt.config_hash);
  write_pod<std::uint64_t>(out, ckpt.seed);
  write_string(out, ckpt.variant);
  write_stack_dims(out, ckpt.params.user);
  write_stack_dims(out, ckpt.params.episode);
  write_stack_payload(out, ckpt.params.user);
  write_stack_payload(out, ckpt.params.episode);
  write_pod<std::uint8_t>(out, ckpt.has_optimizer ? 1 : 0);
  if (ckpt.has_optimizer) {
    write_pod<std::int64_t>(out, ckpt.optimizer.step);
    write_pod<double>(out, ckpt.optimizer.config.learning_rate);
    write_pod<double>(out, ckpt.optimizer.config.beta1);
    write_pod<double>(out, ckpt.optimizer.config.beta2);
    write_pod<double>(out, ckpt.optimizer.config.epsilon);
    write_grads(out, ckpt.optimizer.m_user);
    write_grads(out, ckpt.optimizer.v_user);
    write_grads(out, ckpt.optimizer.m_episode);
    write_grads(out, ckpt.optimizer.v_episode);
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r;
  r.path = path;
  r.in.open(path, std::ios::binary);
  if (!r.in) throw IoError("cannot open checkpoint " + path.string());

  char magic[8];
  r.read_raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IncompatibilityError("not a checkpoint file: " + path.string());
  }
  Checkpoint ckpt;
  ckpt.version = r.read_pod<std::uint32_t>();
  if (ckpt.version != 1) {
    throw IncompatibilityError("unsupported checkpoint version " +
                               std::to_string(ckpt.version));
  }
  ckpt.user_schema_id = r.read_pod<std::uint64_t>();
  ckpt.episode_schema_id = r.read_pod<std::uint64_t>();
  ckpt.config_hash = r.read_pod<std::uint64_t>();
  ckpt.seed = r.read_pod<std::uint64_t>();
  ckpt.variant = r.read_string();

  std::vector<std::pair<Index, Index>> user_shapes, episode_shapes;
  ckpt.params.user = read_stack_dims(r, user_shapes);
  ckpt.params.episode = read_stack_dims(r, episode_shapes);
  read_stack_payload(r, ckpt.params.user, user_shapes);
  read_stack_payload(r, ckpt.params.episode, episode_shapes);

  ckpt.has_optimizer = r.read_pod<std::uint8_t>() != 0;
  if (ckpt.has_optimizer) {
    ckpt.optimizer.step = r.read_pod<std::int64_t>();
    ckpt.optimizer.config.learning_rate = r.read_pod<double>();
    ckpt.optimizer.config.beta1 = r.read_pod<double>();
    ckpt.optimizer.config.beta2 = r.read_pod<double>();
    ckpt.optimizer.config.epsilon = r.read_pod<double>();
    read_grads_like(r, ckpt.params.user, ckpt.optimizer.m_user);
    read_grads_like(r, ckpt.params.user, ckpt.optimizer.v_user);
    read_grads_like(r, ckpt.params.episode, ckpt.optimizer.m_episode);
    read_grads_like(r, ckpt.params.episode, ckpt.optimizer.v_episode);
  }
  return ckpt;
}

void check_schema_compatibility(const Checkpoint& ckpt,
                                std::uint64_t user_schema_id,
                                std::uint64_t episode_schema_id) {
  if (ckpt.user_schema_id != user_schema_id ||
      ckpt.episode_schema_id != episode_schema_id) {
    throw IncompatibilityError(
        "checkpoint feature schemas do not match the dataset");
  }
}

}  // namespace msacl
