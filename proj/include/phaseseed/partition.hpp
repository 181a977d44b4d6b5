// Code partitioning at the transition point: the set F of functions the
// processing phase can reach, and the globals it can access.
#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "phaseseed/interp.hpp"
#include "phaseseed/ir.hpp"

namespace phaseseed {

struct PartitionResult {
  std::set<std::string> functions;  // F
  std::set<std::string> accessible_globals;
  std::map<std::string, std::string> evidence;  // function -> first reason
  /// Instructions of each F member that may run after the transition. An
  /// empty mask is the whole function; live frames only keep the part
  /// reachable from their resume point.
  std::map<std::string, std::vector<bool>> regions;
  bool operator==(const PartitionResult&) const = default;

  std::string to_json() const;
};

struct MemoryRoots {
  std::set<std::string> functions;
  std::set<std::string> globals;
  std::map<std::string, std::string> reasons;  // function -> heap-scan | stack-scan | spawn-entry
};

/// Function values and global references held by live heap objects, live
/// stack objects, live-frame registers and pending spawn arguments. Global
/// contents are not scanned.
MemoryRoots scan_memory_roots(const Program& p, const MachineState& state);

/// Instructions reachable in the CFG of `f` from instruction `resume`.
std::vector<bool> resume_region(const Function& f, int resume);

PartitionResult partition(const Program& p, const MachineState& state);

/// As above with additional root functions (analyzed whole).
PartitionResult partition(const Program& p, const MachineState& state, const std::set<std::string>& extra_roots);

/// Runs the fixpoint iteration starting from `start` (idempotent on a
/// converged result).
PartitionResult close_partition(const Program& p, const MachineState& state, PartitionResult start);

}  // namespace phaseseed
