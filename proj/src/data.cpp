#include "cir/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace cir {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// V^A, saturating well above any enumerable gallery size.
uint64_t latent_space_size(int A, int V) {
  uint64_t n = 1;
  for (int a = 0; a < A; ++a) {
    if (n > (1ull << 62) / static_cast<uint64_t>(V)) return 1ull << 62;
    n *= static_cast<uint64_t>(V);
  }
  return n;
}

constexpr uint64_t kEnumerationCap = 1ull << 22;

}  // namespace

World generate_world(const WorldConfig& spec) {
  const int A = spec.num_attributes, V = spec.values_per_attribute, G = spec.gallery_size;
  if (A < 1 || V < 2 || G < 2) throw ConfigError("world spec requires A >= 1, V >= 2, G >= 2");
  const uint64_t space = latent_space_size(A, V);
  if (static_cast<uint64_t>(G) > space) {
    throw ConfigError("gallery_size " + std::to_string(G) + " exceeds the " +
                      std::to_string(space) + " distinct latent vectors available");
  }

  World world;
  world.spec = spec;
  Rng rng(spec.render_seed);

  world.render_map = Matrix(spec.image_payload_dim, A * V);
  const double scale = 1.0 / std::sqrt(static_cast<double>(A));
  for (size_t i = 0; i < world.render_map.size(); ++i) {
    world.render_map.data()[i] = rng.normal(0.0, scale);
  }

  world.latents.reserve(G);
  if (space <= kEnumerationCap) {
    // Small spaces: a shuffled full enumeration gives uniform distinct draws
    // with no retry loop.
    std::vector<std::vector<int>> all;
    all.reserve(space);
    std::vector<int> cur(A, 1);
    for (uint64_t n = 0; n < space; ++n) {
      all.push_back(cur);
      for (int a = A - 1; a >= 0; --a) {
        if (++cur[a] <= V) break;
        cur[a] = 1;
      }
    }
    rng.shuffle(all);
    world.latents.assign(all.begin(), all.begin() + G);
  } else {
    std::set<std::vector<int>> seen;
    while (static_cast<int>(world.latents.size()) < G) {
      std::vector<int> latent(A);
      for (int a = 0; a < A; ++a) latent[a] = static_cast<int>(rng.uniform_int(1, V));
      if (seen.insert(latent).second) world.latents.push_back(std::move(latent));
    }
  }
  for (int g = 0; g < G; ++g) world.latent_index[world.latents[g]] = g;

  world.payloads = Matrix(G, spec.image_payload_dim);
  for (int g = 0; g < G; ++g) {
    Vec p = render_payload(world, world.latents[g], spec.noise_std > 0.0 ? &rng : nullptr);
    std::copy(p.begin(), p.end(), world.payloads.row(g));
  }
  return world;
}

Vec render_payload(const World& world, const std::vector<int>& latent, Rng* noise_rng) {
  const WorldConfig& spec = world.spec;
  const int A = spec.num_attributes, V = spec.values_per_attribute;
  if (world.render_map.empty()) {
    throw InvalidInputError("render_payload requires a generated world (render map missing)");
  }
  if (static_cast<int>(latent.size()) != A) {
    throw InvalidInputError("latent length does not match num_attributes");
  }
  Vec out(spec.image_payload_dim, 0.0);
  for (int d = 0; d < spec.image_payload_dim; ++d) {
    double acc = 0.0;
    const double* row = world.render_map.row(d);
    for (int a = 0; a < A; ++a) {
      const int v = latent[a];
      if (v < 1 || v > V) throw InvalidInputError("latent value out of range [1..V]");
      acc += row[a * V + (v - 1)];
    }
    if (noise_rng) acc += noise_rng->normal(0.0, spec.noise_std);
    out[d] = acc;
  }
  return out;
}

Vec encode_modification_text(const std::vector<std::pair<int, int>>& changes, int num_attributes,
                             int text_dim) {
  if (text_dim < num_attributes) {
    throw ConfigError("text payload dim must be >= num_attributes");
  }
  Vec slots(text_dim, 0.0);
  for (const auto& [attr, value] : changes) {
    if (attr < 0 || attr >= num_attributes) {
      throw InvalidInputError("change attribute index out of range");
    }
    slots[attr] = static_cast<double>(value);
  }
  return slots;
}

Triplet make_triplet(const World& world, int reference_index,
                     const std::vector<std::pair<int, int>>& changes, int text_dim) {
  const int G = static_cast<int>(world.latents.size());
  if (reference_index < 0 || reference_index >= G) {
    throw InvalidInputError("reference index out of range");
  }
  std::vector<int> latent = world.latents[reference_index];
  for (const auto& [attr, value] : changes) {
    if (attr < 0 || attr >= world.spec.num_attributes) {
      throw InvalidInputError("change attribute index out of range");
    }
    if (value < 1 || value > world.spec.values_per_attribute) {
      throw InvalidInputError("change value out of range [1..V]");
    }
    latent[attr] = value;
  }
  const int target = world.find_latent(latent);
  if (target < 0) {
    throw InvalidInputError("modified latent vector is not present in the gallery");
  }
  Triplet t;
  t.reference_index = reference_index;
  t.target_index = target;
  t.changes = changes;
  std::sort(t.changes.begin(), t.changes.end());
  t.has_changes = true;
  t.text_payload = encode_modification_text(t.changes, world.spec.num_attributes, text_dim);
  return t;
}

std::vector<Triplet> sample_triplets(const World& world, int count, int max_changes,
                                     uint64_t seed, int text_dim) {
  const int A = world.spec.num_attributes, V = world.spec.values_per_attribute;
  const int G = static_cast<int>(world.latents.size());
  if (max_changes < 1 || max_changes > A) {
    throw ConfigError("max_changes must be in [1, num_attributes]");
  }
  constexpr int kMaxAttempts = 10000;
  Rng rng(seed);
  std::vector<Triplet> out;
  out.reserve(count);
  for (int n = 0; n < count; ++n) {
    bool done = false;
    for (int attempt = 0; attempt < kMaxAttempts && !done; ++attempt) {
      const int ref = static_cast<int>(rng.uniform_int(0, G - 1));
      const int k = static_cast<int>(rng.uniform_int(1, max_changes));
      std::vector<int> attrs;
      while (static_cast<int>(attrs.size()) < k) {
        const int a = static_cast<int>(rng.uniform_int(0, A - 1));
        if (std::find(attrs.begin(), attrs.end(), a) == attrs.end()) attrs.push_back(a);
      }
      std::vector<std::pair<int, int>> changes;
      changes.reserve(k);
      std::vector<int> latent = world.latents[ref];
      for (int a : attrs) {
        // Uniform over the V-1 values different from the current one.
        int nv = static_cast<int>(rng.uniform_int(1, V - 1));
        if (nv >= latent[a]) ++nv;
        changes.emplace_back(a, nv);
        latent[a] = nv;
      }
      const int target = world.find_latent(latent);
      if (target < 0) continue;
      Triplet t;
      t.reference_index = ref;
      t.target_index = target;
      std::sort(changes.begin(), changes.end());
      t.changes = std::move(changes);
      t.has_changes = true;
      t.text_payload = encode_modification_text(t.changes, A, text_dim);
      out.push_back(std::move(t));
      done = true;
    }
    if (!done) {
      throw InvalidInputError(
          "sample_triplets could not resolve a target after bounded retries; the gallery is too "
          "sparse for the requested changes");
    }
  }
  return out;
}

// --- file IO -------------------------------------------------------------------

namespace {

std::string payload_file_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "payloads/%06d.json", id);
  return buf;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("malformed JSON in " + path + ": " + e.what());
  }
  return j;
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace

void write_world(const World& world, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "payloads");
  const WorldConfig& s = world.spec;
  write_json_file(json{{"format", "cir-world-v1"},
                       {"num_attributes", s.num_attributes},
                       {"values_per_attribute", s.values_per_attribute},
                       {"gallery_size", s.gallery_size},
                       {"noise_std", s.noise_std},
                       {"render_seed", s.render_seed},
                       {"image_payload_dim", s.image_payload_dim},
                       {"text_payload_dim", s.text_payload_dim}},
                  (fs::path(dir) / "world.json").string());

  json images = json::array();
  for (int g = 0; g < world.payloads.rows(); ++g) {
    const int id = g + 1;
    const std::string file = payload_file_name(id);
    Vec payload(world.payloads.row(g), world.payloads.row(g) + world.payloads.cols());
    write_json_file(json{{"id", id}, {"payload", payload}}, (fs::path(dir) / file).string());
    images.push_back(json{{"id", id}, {"file", file}});
  }
  write_json_file(json{{"payload_dim", world.payloads.cols()}, {"images", images}},
                  (fs::path(dir) / "manifest.json").string());
  write_json_file(json{{"latents", world.latents}}, (fs::path(dir) / "latents.json").string());
}

World load_world(const std::string& dir) {
  const json w = read_json_file((fs::path(dir) / "world.json").string());
  World world;
  world.spec.num_attributes = w.at("num_attributes").get<int>();
  world.spec.values_per_attribute = w.at("values_per_attribute").get<int>();
  world.spec.gallery_size = w.at("gallery_size").get<int>();
  world.spec.noise_std = w.at("noise_std").get<double>();
  world.spec.render_seed = w.at("render_seed").get<uint64_t>();
  world.spec.image_payload_dim = w.at("image_payload_dim").get<int>();
  world.spec.text_payload_dim = w.at("text_payload_dim").get<int>();

  const GalleryManifest manifest = load_manifest((fs::path(dir) / "manifest.json").string());
  world.payloads = load_gallery_payloads(manifest, dir);

  const fs::path latents_path = fs::path(dir) / "latents.json";
  if (fs::exists(latents_path)) {
    const json l = read_json_file(latents_path.string());
    world.latents = l.at("latents").get<std::vector<std::vector<int>>>();
    if (static_cast<int>(world.latents.size()) != world.payloads.rows()) {
      throw ParseError("latents.json size does not match the gallery manifest");
    }
    for (int g = 0; g < static_cast<int>(world.latents.size()); ++g) {
      world.latent_index[world.latents[g]] = g;
    }
  }
  return world;
}

GalleryManifest load_manifest(const std::string& path) {
  const json j = read_json_file(path);
  GalleryManifest m;
  m.payload_dim = j.at("payload_dim").get<int>();
  const json& images = j.at("images");
  m.payload_files.resize(images.size());
  for (const json& rec : images) {
    const int id = rec.at("id").get<int>();
    if (id < 1 || id > static_cast<int>(images.size())) {
      throw ParseError("manifest id " + std::to_string(id) + " outside [1.." +
                       std::to_string(images.size()) + "]");
    }
    m.payload_files[id - 1] = rec.at("file").get<std::string>();
  }
  for (size_t i = 0; i < m.payload_files.size(); ++i) {
    if (m.payload_files[i].empty()) {
      throw ParseError("manifest is missing id " + std::to_string(i + 1));
    }
  }
  return m;
}

Matrix load_gallery_payloads(const GalleryManifest& manifest, const std::string& base_dir) {
  Matrix out(manifest.size(), manifest.payload_dim);
  for (int g = 0; g < manifest.size(); ++g) {
    const json j = read_json_file((fs::path(base_dir) / manifest.payload_files[g]).string());
    const Vec payload = j.at("payload").get<Vec>();
    if (static_cast<int>(payload.size()) != manifest.payload_dim) {
      throw ParseError("payload file " + manifest.payload_files[g] + " has length " +
                       std::to_string(payload.size()) + ", expected " +
                       std::to_string(manifest.payload_dim));
    }
    std::copy(payload.begin(), payload.end(), out.row(g));
  }
  return out;
}

void write_triplets(const std::vector<Triplet>& triplets, const std::string& path,
                    const TripletFileFormat& fmt) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const Triplet& t : triplets) {
    json rec{{fmt.ref_key, t.reference_index + 1},
             {fmt.text_key, t.text_payload},
             {fmt.target_key, t.target_index + 1}};
    if (t.has_changes) rec[fmt.changes_key] = t.changes;
    if (!t.subset.empty()) {
      std::vector<int> ids;
      ids.reserve(t.subset.size());
      for (int s : t.subset) ids.push_back(s + 1);
      rec[fmt.subset_key] = ids;
    }
    out << rec.dump() << "\n";
  }
  if (!out) throw IoError("write failed for " + path);
}

std::vector<Triplet> ingest_triplet_file(const std::string& path, const TripletFileFormat& fmt,
                                         int gallery_size) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<Triplet> out;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw ParseError(path + ":" + std::to_string(line_no) + ": " + msg);
  };
  auto resolve_id = [&](int id) {
    if (id < 1 || id > gallery_size) {
      fail("gallery id " + std::to_string(id) + " is not in [1.." +
           std::to_string(gallery_size) + "]");
    }
    return id - 1;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      fail(std::string("malformed record: ") + e.what());
    }
    Triplet t;
    try {
      t.reference_index = resolve_id(rec.at(fmt.ref_key).get<int>());
      t.target_index = resolve_id(rec.at(fmt.target_key).get<int>());
      t.text_payload = rec.at(fmt.text_key).get<Vec>();
      if (rec.contains(fmt.changes_key)) {
        t.changes = rec.at(fmt.changes_key).get<std::vector<std::pair<int, int>>>();
        t.has_changes = true;
      }
      if (rec.contains(fmt.subset_key)) {
        for (const json& id : rec.at(fmt.subset_key)) {
          t.subset.push_back(resolve_id(id.get<int>()));
        }
        if (std::find(t.subset.begin(), t.subset.end(), t.target_index) == t.subset.end()) {
          fail("subset does not contain the target id " + std::to_string(t.target_index + 1));
        }
      }
    } catch (const ParseError&) {
      throw;
    } catch (const json::exception& e) {
      fail(std::string("bad field: ") + e.what());
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace cir
