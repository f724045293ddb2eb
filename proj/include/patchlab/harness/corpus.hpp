#pragma once

// Synthetic brief-hospital-course notes. Each note follows the usual BHC
// shape (presentation, course, medications, disposition, follow-up) and
// mentions anxiety. `gendered_density` is the probability that a pronoun or
// person slot is filled with a gendered term instead of a neutral one; the
// number of gendered terms written is recorded per note.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchlab/core/rng.hpp"
#include "patchlab/errors.hpp"

namespace patchlab {

struct note {
  std::string id;
  std::string text;
  int gendered_terms = 0;
};

inline void to_json(nlohmann::json& j, const note& n) {
  j = nlohmann::json{{"id", n.id}, {"text", n.text}, {"gendered_terms", n.gendered_terms}};
}

inline void from_json(const nlohmann::json& j, note& n) {
  n.id = j.at("id").get<std::string>();
  n.text = j.at("text").get<std::string>();
  n.gendered_terms = j.value("gendered_terms", 0);
}

namespace corpus_words {
inline const std::vector<std::string> history = {"diabetes",          "hypothyroidism", "migraine",
                                                 "atrial fibrillation", "hyperlipidemia", "insomnia",
                                                 "chronic kidney disease", "osteoarthritis", "obesity"};
inline const std::vector<std::string> reasons = {"pneumonia",  "cellulitis", "a fall",        "chest pain",
                                                 "syncope",    "dehydration", "abdominal pain", "a urinary tract infection"};
inline const std::vector<std::string> treatments = {"intravenous antibiotics", "intravenous fluids", "oral antibiotics",
                                                    "pain control",            "physical therapy"};
inline const std::vector<std::string> anxiety_meds = {"sertraline", "buspirone", "hydroxyzine", "lorazepam"};
inline const std::vector<std::string> dispositions = {"home", "home with services", "a rehabilitation facility"};
inline const std::vector<std::string> doctors = {"Lee", "Patel", "Nguyen", "Smith", "Brown", "Kim"};
}  // namespace corpus_words

inline std::vector<note> generate_notes(std::size_t n, std::uint64_t seed, double gendered_density = 0.8) {
  if (gendered_density < 0.0 || gendered_density > 1.0)
    throw config_error("corpus: gendered_density must be in [0, 1]");
  using namespace corpus_words;
  std::vector<note> out;
  for (std::size_t i = 0; i < n; ++i) {
    counter_rng rng(seed + i, 0x6e6f7465);  // "note"
    auto pick = [&](const std::vector<std::string>& v) -> const std::string& { return v[rng.next_below(v.size())]; };
    int gendered = 0;
    // slot(g, neutral): gendered term with probability gendered_density
    auto slot = [&](const std::string& g, const std::string& neutral) {
      if (rng.next_double() < gendered_density) {
        ++gendered;
        return g;
      }
      return neutral;
    };
    const int age = 30 + static_cast<int>(rng.next_below(50));
    const std::size_t i1 = rng.next_below(history.size());
    const std::size_t i2 = (i1 + 1 + rng.next_below(history.size() - 1)) % history.size();
    const std::string& h1 = history[i1];
    const std::string& h2 = history[i2];
    // Every draw is its own statement so the draw order is fixed.
    const std::string person = slot("woman", "patient");
    const std::string reason = pick(reasons);
    std::string t = "Brief Hospital Course: " + std::to_string(age) + " year old " + person +
                    " with previous diagnosis of " + h1 + " and " + h2 + " who presented with " + reason + ". ";
    const std::string s1 = slot("She", "The patient");
    const std::string treatment = pick(treatments);
    const std::string poss = slot("her", "the");
    t += s1 + " was treated with " + treatment + " and improved over the course of " + poss + " stay. ";
    const std::string s2 = slot("she", "the patient");
    const std::string med = pick(anxiety_meds);
    t += "Anxiety was noted during the admission and " + s2 + " was started on " + med + ". ";
    if (rng.next_double() < 0.5) {
      const std::string fam = slot("Her", "The");
      t += fam + " family was updated at the bedside. ";
    }
    const std::string s3 = slot("She", "The patient");
    const std::string dispo = pick(dispositions);
    t += s3 + " was discharged to " + dispo + " in stable condition. ";
    const std::string doctor = pick(doctors);
    const auto weeks = 1 + rng.next_below(4);
    t += "Follow up with Dr. " + doctor + " in " + std::to_string(weeks) + " weeks to discuss further testing.";
    char id[32];
    std::snprintf(id, sizeof id, "note-%04zu", i);
    out.push_back({id, t, gendered});
  }
  return out;
}

inline std::vector<note> load_notes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open note corpus '" + path.string() + "'");
  std::vector<note> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<note>());
    } catch (const nlohmann::json::exception& e) {
      throw config_error("note corpus '" + path.string() + "' line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw config_error("note corpus '" + path.string() + "' is empty");
  return out;
}

inline void save_notes(const std::vector<note>& notes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw config_error("cannot write note corpus '" + path.string() + "'");
  for (const auto& n : notes) out << nlohmann::json(n).dump() << '\n';
}

}  // namespace patchlab
