#include "locagg/oracle.h"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace locagg::oracle {

std::vector<Assignment> CommonAssignments(const PlainInstance& inst) {
  if (inst.facilities.empty()) throw std::invalid_argument("oracle: empty facility set");
  const std::unordered_set<UserId> client(inst.client_ids.begin(), inst.client_ids.end());
  std::vector<Assignment> out;
  for (const UserRecord& u : inst.server_users) {
    if (!client.contains(u.id)) continue;
    out.push_back(AssignNearest(u.location, inst.facilities, inst.metric));
  }
  return out;
}

std::vector<std::int64_t> ExactRnnq(const PlainInstance& inst) {
  std::vector<std::int64_t> counts(inst.facilities.size(), 0);
  for (const Assignment& a : CommonAssignments(inst)) ++counts[a.nearest_index];
  return counts;
}

ExactAverage ExactAvgq(const PlainInstance& inst) {
  ExactAverage out;
  for (const Assignment& a : CommonAssignments(inst)) {
    out.total += a.distance;
    ++out.count;
  }
  if (out.count > 0) out.average = Rational::Of(out.total, out.count);
  return out;
}

std::optional<std::int64_t> ExactMaxq(const PlainInstance& inst) {
  std::optional<std::int64_t> best;
  for (const Assignment& a : CommonAssignments(inst)) {
    if (!best || a.distance > *best) best = a.distance;
  }
  return best;
}

}  // namespace locagg::oracle
