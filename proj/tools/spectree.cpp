#include <spectree/cli.hpp>

int main(int argc, char** argv) { return spectree::cli::run(argc, argv); }
