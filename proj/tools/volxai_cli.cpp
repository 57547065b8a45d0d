#include "volxai/commands.hpp"

int main(int argc, char** argv) { return volxai::cmd::main(argc, argv); }
