#include "spikedrive/common.hpp"

#include <Eigen/Core>

#include <cstdlib>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace spikedrive {

int thread_count() {
  if (const char* env = std::getenv("SPIKEDRIVE_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

void setup_threads() {
  const int n = thread_count();
#ifdef _OPENMP
  omp_set_num_threads(n);
#endif
  Eigen::setNbThreads(n);
}

}  // namespace spikedrive
