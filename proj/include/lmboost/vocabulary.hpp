#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lmboost/bitdesc.hpp"
#include "lmboost/errors.hpp"
#include "lmboost/map.hpp"
#include "lmboost/rng.hpp"

namespace lmboost {

/// Visual vocabulary over binary descriptors. Centroids are pairwise
/// distinct bit strings of the map's descriptor length.
struct Vocabulary {
  std::vector<BinaryDescriptor> centroids;
  std::uint32_t descriptor_bits = 0;
  std::uint64_t seed = 0;

  std::uint32_t k() const { return static_cast<std::uint32_t>(centroids.size()); }
};

/// Word index of the nearest centroid by Hamming distance; ties resolve to
/// the lowest word index.
inline std::uint32_t quantize(const BinaryDescriptor& descriptor,
                              const Vocabulary& vocab) {
  if (descriptor.size_bits() != vocab.descriptor_bits)
    throw Error("quantize: descriptor has " + std::to_string(descriptor.size_bits()) +
                " bits, vocabulary uses " + std::to_string(vocab.descriptor_bits));
  std::uint32_t best = 0;
  std::uint32_t best_d = hamming_distance(descriptor, vocab.centroids[0]);
  for (std::uint32_t w = 1; w < vocab.k(); ++w) {
    const std::uint32_t d = hamming_distance(descriptor, vocab.centroids[w]);
    if (d < best_d) {
      best_d = d;
      best = w;
    }
  }
  return best;
}

namespace detail {

/// Bitwise majority of a cluster; per-bit ties go to 0.
inline BinaryDescriptor majority_centroid(std::span<const BinaryDescriptor> descriptors,
                                          std::span<const std::uint32_t> members,
                                          std::uint32_t bits) {
  std::vector<std::uint32_t> ones(bits, 0);
  for (const std::uint32_t m : members)
    for (std::uint32_t b = 0; b < bits; ++b)
      if (descriptors[m].get(b)) ++ones[b];
  BinaryDescriptor c(bits);
  const std::uint32_t n = static_cast<std::uint32_t>(members.size());
  for (std::uint32_t b = 0; b < bits; ++b)
    if (2 * ones[b] > n) c.set(b, true);
  return c;
}

}  // namespace detail

/// k-medians over Hamming space: assignment by nearest centroid, update by
/// bitwise majority vote. Empty clusters are reseeded with the descriptor
/// currently farthest from its centroid. Deterministic given the seed.
///
/// `distortion_trace`, when given, receives the total Hamming distortion
/// after each assignment step (non-increasing by construction).
inline Vocabulary train_vocabulary(std::span<const BinaryDescriptor> descriptors,
                                   std::uint32_t k, std::uint64_t seed,
                                   std::uint32_t max_iters = 50,
                                   std::vector<std::uint64_t>* distortion_trace = nullptr) {
  if (k < 1) throw ConfigError("train_vocabulary: k must be >= 1");
  if (descriptors.size() < k)
    throw Error("train_vocabulary: need at least k descriptors");
  const std::uint32_t bits = descriptors[0].size_bits();
  for (const auto& d : descriptors)
    if (d.size_bits() != bits)
      throw Error("train_vocabulary: descriptors have mixed bit lengths");

  // Seed with k distinct descriptors drawn in shuffled order.
  std::vector<std::uint32_t> order(descriptors.size());
  for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  shuffle(order, rng);

  std::vector<BinaryDescriptor> centroids;
  for (const std::uint32_t i : order) {
    if (std::find(centroids.begin(), centroids.end(), descriptors[i]) == centroids.end())
      centroids.push_back(descriptors[i]);
    if (centroids.size() == k) break;
  }
  if (centroids.size() < k)
    throw Error("train_vocabulary: fewer than k distinct descriptors (" +
                std::to_string(centroids.size()) + " < " + std::to_string(k) + ")");

  Vocabulary vocab;
  vocab.centroids = std::move(centroids);
  vocab.descriptor_bits = bits;
  vocab.seed = seed;

  std::vector<std::uint32_t> assignment(descriptors.size(), 0);
  std::vector<std::uint32_t> distance(descriptors.size(), 0);
  for (std::uint32_t iter = 0; iter < max_iters; ++iter) {
    bool changed = iter == 0;
    std::uint64_t distortion = 0;
    for (std::uint32_t i = 0; i < descriptors.size(); ++i) {
      const std::uint32_t w = quantize(descriptors[i], vocab);
      distance[i] = hamming_distance(descriptors[i], vocab.centroids[w]);
      distortion += distance[i];
      if (assignment[i] != w) changed = true;
      assignment[i] = w;
    }
    if (distortion_trace) distortion_trace->push_back(distortion);
    if (!changed) break;

    std::vector<std::vector<std::uint32_t>> clusters(k);
    for (std::uint32_t i = 0; i < descriptors.size(); ++i)
      clusters[assignment[i]].push_back(i);

    for (std::uint32_t w = 0; w < k; ++w) {
      if (!clusters[w].empty()) {
        vocab.centroids[w] =
            detail::majority_centroid(descriptors, clusters[w], bits);
      } else {
        // Reseed with the globally worst-fitting descriptor. It has positive
        // distance to every centroid, so distinctness is preserved.
        std::uint32_t worst = 0;
        for (std::uint32_t i = 1; i < descriptors.size(); ++i)
          if (distance[i] > distance[worst]) worst = i;
        vocab.centroids[w] = descriptors[worst];
        distance[worst] = 0;
      }
    }
  }
  return vocab;
}

/// Word-indexed buckets of candidate classes. Class c lands in bucket w iff
/// some positive observation of c quantizes to w.
struct InvertedFile {
  std::vector<std::vector<std::int32_t>> word_to_classes;
  std::uint64_t map_fingerprint = 0;
};

inline InvertedFile build_inverted_file(const SfMMap& map, const Vocabulary& vocab,
                                        const ClassTable& classes) {
  InvertedFile inv;
  inv.word_to_classes.resize(vocab.k());
  inv.map_fingerprint = map.fingerprint();
  for (const auto& lm : map.landmarks) {
    const std::int32_t cls = classes.class_of(lm.landmark_id);
    if (cls <= 0) continue;  // not a classifier class
    for (const auto& obs : lm.observations) {
      const Frame* f = map.find_frame(obs.frame_id);
      const auto& kp = f->keypoints[static_cast<std::size_t>(obs.keypoint_index)];
      inv.word_to_classes[quantize(kp.descriptor, vocab)].push_back(cls);
    }
  }
  for (auto& bucket : inv.word_to_classes) {
    std::sort(bucket.begin(), bucket.end());
    bucket.erase(std::unique(bucket.begin(), bucket.end()), bucket.end());
  }
  return inv;
}

/// Candidate class subset for a query descriptor: the bucket of its visual
/// word, always including the background class 0.
inline std::vector<std::int32_t> candidate_classes(const BinaryDescriptor& descriptor,
                                                   const Vocabulary& vocab,
                                                   const InvertedFile& inv) {
  const std::uint32_t w = quantize(descriptor, vocab);
  std::vector<std::int32_t> out;
  out.reserve(inv.word_to_classes[w].size() + 1);
  out.push_back(0);
  out.insert(out.end(), inv.word_to_classes[w].begin(), inv.word_to_classes[w].end());
  return out;
}

// Text format: one header line "k bits seed", then k hex centroid lines.

inline void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << vocab.k() << ' ' << vocab.descriptor_bits << ' ' << vocab.seed << '\n';
  for (const auto& c : vocab.centroids) out << c.to_hex() << '\n';
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  Vocabulary vocab;
  std::uint32_t k = 0;
  std::string header;
  if (!std::getline(in, header)) throw ParseError(path + ":1: missing header");
  std::istringstream hs(header);
  if (!(hs >> k >> vocab.descriptor_bits >> vocab.seed))
    throw ParseError(path + ":1: expected 'k bits seed'");
  std::string line;
  for (std::uint32_t w = 0; w < k; ++w) {
    if (!std::getline(in, line))
      throw ParseError(path + ": expected " + std::to_string(k) + " centroids");
    vocab.centroids.push_back(BinaryDescriptor::from_hex(line, vocab.descriptor_bits));
  }
  return vocab;
}

}  // namespace lmboost
