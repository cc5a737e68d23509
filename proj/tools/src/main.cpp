#include "winnorm_cli/app.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Activation buffers of a few MB are freed and reallocated every step. Keeping them on
  // the heap instead of fresh mmap pages avoids a page-fault storm per step.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  return winnorm::cli::run_main(argc, argv);
}
