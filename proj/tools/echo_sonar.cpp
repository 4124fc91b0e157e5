#include <string>
#include <vector>

#include "echosonar/session.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return echosonar::run_cli(args);
}
