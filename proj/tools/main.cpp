#include "cli.hpp"
#include "gst/runtime.hpp"

int main(int argc, char** argv) {
  gst::keep_large_allocations();
  return gst::cli::run_cli(argc, argv);
}
