#include "shades/cli.hpp"

int main(int argc, char** argv) { return shades::dispatch(argc, argv); }
