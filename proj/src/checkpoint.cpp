#include <fstream>
#include <sstream>

#include "hil/errors.hpp"
#include "hil/trainer.hpp"

namespace hil {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  return out;
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingCheckpoint, "cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(text));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::ParseError, path.string() + " line " + std::to_string(line) + ": " + e.what());
    }
  }
  return out;
}

nlohmann::json row_json(std::span<const double> values) { return nlohmann::json(std::vector<double>(values.begin(), values.end())); }

void write_memory_rows(std::ofstream& out, const ModalityMemory& mem, Modality m, int& next_id) {
  for (std::size_t c = 0; c < mem.coarse.rows(); ++c) {
    out << nlohmann::json{{"id", next_id++}, {"modality", to_string(m)}, {"gt", nullptr}, {"level", "coarse"},
                          {"coarse", c}, {"sub", nullptr}, {"raw", row_json(mem.coarse.row(c))}}
               .dump()
        << '\n';
  }
  for (std::size_t c = 0; c < mem.fine.size(); ++c) {
    for (std::size_t s = 0; s < mem.fine[c].rows(); ++s) {
      out << nlohmann::json{{"id", next_id++}, {"modality", to_string(m)}, {"gt", nullptr}, {"level", "fine"},
                            {"coarse", c}, {"sub", s}, {"raw", row_json(mem.fine[c].row(s))}}
                 .dump()
          << '\n';
    }
  }
}

}  // namespace

// Memory rows reuse the dataset record layout (id/modality/gt/raw) plus the
// level and cluster coordinates; values are written at full precision.
void save_memory_bank(const MemoryBank& bank, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << nlohmann::json{{"kind", "bank"}, {"alpha", bank.alpha}, {"tau", bank.tau}}.dump() << '\n';
  int next_id = 0;
  write_memory_rows(out, bank.vis, Modality::Vis, next_id);
  write_memory_rows(out, bank.ir, Modality::Ir, next_id);
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path.string());
}

MemoryBank load_memory_bank(const std::filesystem::path& path) {
  MemoryBank bank;
  try {
    for (const auto& rec : read_jsonl(path)) {
      if (rec.contains("kind")) {
        bank.alpha = rec.at("alpha").get<double>();
        bank.tau = rec.at("tau").get<double>();
        continue;
      }
      auto& mem = bank.of(parse_modality(rec.at("modality").get<std::string>()));
      const auto values = rec.at("raw").get<std::vector<double>>();
      const auto c = rec.at("coarse").get<std::size_t>();
      if (rec.at("level").get<std::string>() == "coarse") {
        if (c != mem.coarse.rows()) throw Error(ErrorCode::ParseError, "memory rows out of order");
        mem.coarse.append_row(values);
      } else {
        if (c >= mem.fine.size()) mem.fine.resize(c + 1);
        mem.fine[c].append_row(values);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, "malformed memory bank " + path.string() + ": " + e.what());
  }
  return bank;
}

void save_checkpoint(const std::filesystem::path& dir, const TrainState& state, const TrainConfig& config,
                     const MemoryBank* bank) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create checkpoint directory " + dir.string());

  {
    auto out = open_out(dir / "encoder.jsonl");
    for (std::size_t i = 0; i < state.encoder.weight.rows(); ++i) {
      out << nlohmann::json{{"kind", "weight"}, {"row", i}, {"values", row_json(state.encoder.weight.row(i))}}.dump()
          << '\n';
    }
    out << nlohmann::json{{"kind", "bias"}, {"values", state.encoder.bias}}.dump() << '\n';
    if (!out) throw Error(ErrorCode::Io, "failed writing encoder checkpoint");
  }
  if (bank != nullptr) save_memory_bank(*bank, dir / "memory.jsonl");

  std::ostringstream rng_state;
  rng_state << state.rng;
  auto out = open_out(dir / "state.json");
  out << nlohmann::json{{"next_epoch", state.next_epoch}, {"rng", rng_state.str()}, {"config", to_json(config)}}.dump(2)
      << '\n';
  if (!out) throw Error(ErrorCode::Io, "failed writing checkpoint state");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir) || !std::filesystem::exists(dir / "state.json")) {
    throw Error(ErrorCode::MissingCheckpoint, "no checkpoint at " + dir.string());
  }
  Checkpoint cp;
  try {
    std::ifstream in(dir / "state.json");
    const auto j = nlohmann::json::parse(in);
    cp.state.next_epoch = j.at("next_epoch").get<int>();
    std::istringstream rng_state(j.at("rng").get<std::string>());
    rng_state >> cp.state.rng;
    if (!rng_state) throw Error(ErrorCode::ParseError, "corrupt rng state in checkpoint");
    cp.config = train_config_from_json(j.at("config"));

    for (const auto& rec : read_jsonl(dir / "encoder.jsonl")) {
      const auto values = rec.at("values").get<std::vector<double>>();
      if (rec.at("kind").get<std::string>() == "weight") {
        if (rec.at("row").get<std::size_t>() != cp.state.encoder.weight.rows()) {
          throw Error(ErrorCode::ParseError, "encoder rows out of order");
        }
        cp.state.encoder.weight.append_row(values);
      } else {
        cp.state.encoder.bias = values;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, "malformed checkpoint " + dir.string() + ": " + e.what());
  }
  if (cp.state.encoder.bias.size() != cp.state.encoder.weight.cols()) {
    throw Error(ErrorCode::ParseError, "encoder bias does not match weight shape");
  }
  if (std::filesystem::exists(dir / "memory.jsonl")) cp.memory = load_memory_bank(dir / "memory.jsonl");
  return cp;
}

}  // namespace hil
