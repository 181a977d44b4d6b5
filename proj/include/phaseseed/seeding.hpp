// Turns the transition snapshot into initial points-to facts.
#pragma once

#include <map>
#include <set>
#include <stdexcept>
#include <string>

#include "phaseseed/andersen.hpp"
#include "phaseseed/interp.hpp"

namespace phaseseed {

enum class HeapModel { Site, Clone };

/// Abstract root of every live heap object: `site#k` (clone model, k is the
/// allocation-order ordinal among live objects of the site) or `site`.
struct CloneTable {
  std::map<int, std::string> roots;
  bool operator==(const CloneTable&) const = default;
};

CloneTable clone_heap_sites(const Program& p, const MachineState& state, HeapModel model = HeapModel::Clone);

class SeedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SeedOptions {
  /// Only function values held in heap and stack cells (the ablation that
  /// re-analyzes executed init code instead of seeding its facts).
  bool functions_only = false;
  /// Globals whose cells are seeded; null seeds every global.
  const std::set<std::string>* accessible_globals = nullptr;
};

/// Root name of any object: `@g` for globals, the alloc site for stack
/// objects, the clone table entry for heap objects.
std::string object_root(const Program& p, const MachineState& state, const CloneTable& clones, int obj);

/// Throws SeedError when a pointer cell refers to a freed or popped object.
SeedFacts extract_seeds(const Program& p, const MachineState& state, const CloneTable& clones,
                        const SeedOptions& opts = {});

/// Strips clone ordinals (`site#k` -> `site`) from every Obj node.
SeedFacts project_to_sites(const SeedFacts& seeds);
NodeKey project_to_site(NodeKey k);

/// One `{"node": ..., "member": ...}` object per line.
std::string seeds_to_jsonl(const SeedFacts& seeds);

}  // namespace phaseseed
