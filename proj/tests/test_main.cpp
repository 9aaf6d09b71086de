#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "reident/log.hpp"

int main(int argc, char** argv) {
  reident::init_logging_from_env();
  return doctest::Context(argc, argv).run();
}
