#include "geosteer/pipeline.hpp"

int main(int argc, char** argv) { return geosteer::pipeline::run_cli(argc, argv); }
