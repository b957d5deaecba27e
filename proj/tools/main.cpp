#include <cstdio>

int main() {
  std::puts("dmgp: subcommands not wired up yet");
  return 0;
}
