#include "cli.hpp"

int main(int argc, char** argv) {
    return ppn::cli::run(argc, argv);
}
