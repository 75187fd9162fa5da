#pragma once

namespace minibert {

// Entry point of the pipeline driver. Subcommands: train-vocab,
// align-vocab, pretrain, finetune, evaluate, predict, compare-runs.
// Shared flags: --config PATH, --set KEY=VALUE (repeatable), --seed N,
// --out DIR. Every artifact-producing run writes a manifest.json into
// its output directory. Returns 0 on success, 2 on invalid flags or
// configuration, 1 on runtime failure; failures print a single
// "error: ..." line to the diagnostic stream.
int cli_main(int argc, const char* const* argv);

}  // namespace minibert
