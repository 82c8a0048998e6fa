#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cir/common.hpp"
#include "cir/config.hpp"
#include "cir/rng.hpp"

namespace cir {

/// Closed synthetic gallery: every image is a noisy linear rendering of a
/// distinct latent attribute vector in [1..V]^A.
struct World {
  WorldConfig spec;
  std::vector<std::vector<int>> latents;  // G × A, values 1..V
  Matrix payloads;                        // G × image_payload_dim
  Matrix render_map;                      // image_payload_dim × (A*V); empty when loaded from disk
  std::map<std::vector<int>, int> latent_index;

  int find_latent(const std::vector<int>& latent) const {
    auto it = latent_index.find(latent);
    return it == latent_index.end() ? -1 : it->second;
  }
};

/// Deterministic given spec.render_seed. Latent vectors are sampled uniformly
/// and resampled until all G are distinct; G > V^A is a configuration error.
World generate_world(const WorldConfig& spec);

/// Renders one latent through the world's linear map; `noise_rng` adds
/// N(0, noise_std) per coordinate when non-null. Exposed for tests.
Vec render_payload(const World& world, const std::vector<int>& latent, Rng* noise_rng);

/// One retrieval query: reference gallery image, slot-encoded modification
/// text, and resolved target. `changes` is present for synthetic data only.
struct Triplet {
  int reference_index = -1;  // 0-based gallery index
  int target_index = -1;     // 0-based gallery index
  Vec text_payload;
  bool has_changes = false;
  std::vector<std::pair<int, int>> changes;  // (attribute index 0-based, new value 1..V)
  std::vector<int> subset;                   // optional candidate set, 0-based indices

  bool operator==(const Triplet& o) const = default;
};

/// Slot encoding: slot a carries 0 ("unchanged") or the new value v in 1..V;
/// zero-padded to text_dim.
Vec encode_modification_text(const std::vector<std::pair<int, int>>& changes, int num_attributes,
                             int text_dim);

/// Builds the triplet implied by applying `changes` to a reference image.
/// Zero changes resolve the target to the reference itself. Throws
/// InvalidInputError when the modified latent is not in the gallery.
Triplet make_triplet(const World& world, int reference_index,
                     const std::vector<std::pair<int, int>>& changes, int text_dim);

/// Samples triplets: uniform reference, 1..max_changes distinct attribute
/// changes with new values != old, target resolved by gallery lookup;
/// attempts that miss the gallery are resampled (bounded retries).
std::vector<Triplet> sample_triplets(const World& world, int count, int max_changes,
                                     uint64_t seed, int text_dim);

// --- file formats -------------------------------------------------------------

/// Maps 1-based external ids to payload files.
struct GalleryManifest {
  int payload_dim = 0;
  std::vector<std::string> payload_files;  // index i holds id i+1
  int size() const { return static_cast<int>(payload_files.size()); }
};

/// Field names for line-delimited triplet records (JSONL).
struct TripletFileFormat {
  std::string ref_key = "ref";
  std::string text_key = "text";
  std::string target_key = "target";
  std::string subset_key = "subset";
  std::string changes_key = "changes";
};

void write_world(const World& world, const std::string& dir);
World load_world(const std::string& dir);

GalleryManifest load_manifest(const std::string& path);
Matrix load_gallery_payloads(const GalleryManifest& manifest, const std::string& base_dir);

void write_triplets(const std::vector<Triplet>& triplets, const std::string& path,
                    const TripletFileFormat& fmt = {});

/// Parses line-delimited triplet records, resolving ids against the manifest
/// gallery size. Malformed records and unknown ids raise ParseError naming
/// the line.
std::vector<Triplet> ingest_triplet_file(const std::string& path, const TripletFileFormat& fmt,
                                         int gallery_size);

}  // namespace cir
