#include <string>
#include <vector>

#include "dstlab/experiment.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return dstlab::experiment::run_cli(args);
}
