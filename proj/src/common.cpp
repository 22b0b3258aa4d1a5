#include "nukes/common.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>
#include <thread>

namespace nukes {

const char* err_name(ErrCode c) {
  switch (c) {
    case ErrCode::MissingFile: return "MissingFile";
    case ErrCode::HeaderMismatch: return "HeaderMismatch";
    case ErrCode::NonFiniteData: return "NonFiniteData";
    case ErrCode::IoFailure: return "IoFailure";
    case ErrCode::RankDeficient: return "RankDeficient";
    case ErrCode::DimensionMismatch: return "DimensionMismatch";
    case ErrCode::ShapeMismatch: return "ShapeMismatch";
    case ErrCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrCode::DegreeUnsupported: return "DegreeUnsupported";
    case ErrCode::OutOfDomain: return "OutOfDomain";
    case ErrCode::ZeroDenominator: return "ZeroDenominator";
    case ErrCode::InvalidParam: return "InvalidParam";
    case ErrCode::NonScalarOutput: return "NonScalarOutput";
    case ErrCode::OddSpatialSize: return "OddSpatialSize";
    case ErrCode::ChannelMismatch: return "ChannelMismatch";
    case ErrCode::ZeroVector: return "ZeroVector";
    case ErrCode::TooFewPatches: return "TooFewPatches";
    case ErrCode::AllElementsGuarded: return "AllElementsGuarded";
    case ErrCode::IdenticalImages: return "IdenticalImages";
    case ErrCode::ConstantReference: return "ConstantReference";
    case ErrCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrCode::ConfigInvalid: return "ConfigInvalid";
  }
  return "Unknown";
}

int max_threads() {
  static int cached = [] {
    const char* env = std::getenv("NUKES_THREADS");
    if (!env) return 1;
    int n = std::atoi(env);
    if (n < 1) n = 1;
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw > 0) n = std::min(n, hw);
    return n;
  }();
  return cached;
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
  int nt = max_threads();
  if (nt <= 1 || n < 4096) {
    body(0, n);
    return;
  }
  int64_t chunk = (n + nt - 1) / nt;
  std::vector<std::thread> workers;
  for (int t = 0; t < nt; ++t) {
    int64_t lo = t * chunk;
    int64_t hi = std::min<int64_t>(n, lo + chunk);
    if (lo >= hi) break;
    workers.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& w : workers) w.join();
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

}  // namespace nukes
