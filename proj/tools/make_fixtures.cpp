// Writes the toy model, its tokenizer, the uniform judge, the note corpus and
// the default lexicon.
//   make_fixtures <fixtures-dir>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "patchlab/harness/corpus.hpp"
#include "patchlab/metrics/lexicon.hpp"
#include "patchlab/model/toy_format.hpp"
#include "patchlab/toy/builder.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixtures <fixtures-dir>\n";
    return 1;
  }
  namespace fs = std::filesystem;
  const fs::path root = argv[1];
  try {
    fs::create_directories(root / "models");
    fs::create_directories(root / "data");
    const auto tok = patchlab::toy::build_tokenizer();
    {
      std::ofstream out(root / "models" / "toy_tokenizer.json", std::ios::binary | std::ios::trunc);
      out << tok.to_json().dump(1) << '\n';
    }
    patchlab::save_toy_model(patchlab::toy::build_model(tok), root / "models" / "toy.plab");
    patchlab::save_toy_model(patchlab::toy::build_uniform_judge(tok), root / "models" / "uniform_judge.plab");
    patchlab::save_notes(patchlab::generate_notes(200, 7), root / "data" / "notes.jsonl");
    {
      std::ofstream out(root / "data" / "lexicon.json", std::ios::binary | std::ios::trunc);
      out << nlohmann::json(patchlab::default_lexicon()).dump(2) << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "make_fixtures: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
