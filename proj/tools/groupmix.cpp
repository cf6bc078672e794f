#include "groupmix/harness.hpp"

int main(int argc, char** argv) { return groupmix::cli_main(argc, argv); }
