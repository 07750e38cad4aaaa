#include "multidepth/cli.hpp"

int main(int argc, char** argv) { return multidepth::dispatch(argc, argv); }
