#include <qdep/cli.hpp>

#include <iostream>

int
main(int argc, char** argv)
{
  return qdep::cli::run(argc, argv, std::cout, std::cerr);
}
