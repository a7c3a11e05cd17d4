#include "asiseg/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "asiseg/checkpoint.hpp"
#include "asiseg/error.hpp"
#include "asiseg/image_io.hpp"
#include "asiseg/synth.hpp"
#include "asiseg/train.hpp"

#ifndef ASISEG_DATA_DIR_DEFAULT
#define ASISEG_DATA_DIR_DEFAULT "data"
#endif

namespace asiseg {

namespace fs = std::filesystem;

namespace {

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kArgument: return 2;
    case ErrorCode::kConfig: return 3;
    case ErrorCode::kIo: return 4;
    case ErrorCode::kSchema:
    case ErrorCode::kValidation:
    case ErrorCode::kManifest:
    case ErrorCode::kShape:
    case ErrorCode::kInputTooShort:
    case ErrorCode::kSampleRate:
    case ErrorCode::kEmptyDataset:
    case ErrorCode::kDegenerateRange: return 5;
    case ErrorCode::kVersion: return 6;
    case ErrorCode::kNumeric: return 7;
  }
  return 1;
}

void error_line(std::ostream& err, std::string_view code, const std::string& message) {
  err << nlohmann::json{{"error", code}, {"message", message}}.dump() << "\n";
}

std::string default_data_dir() {
  const char* env = std::getenv("ASISEG_DATA_DIR");
  return env && *env ? env : ASISEG_DATA_DIR_DEFAULT;
}

std::string checkpoint_or_default(const std::string& checkpoint, const std::string& data) {
  return checkpoint.empty() ? (fs::path(data) / "asiseg.ckpt").string() : checkpoint;
}

torch::Tensor read_rgb(const std::string& path) {
  auto img = read_png(path);
  if (img.size(2) == 1) img = img.expand({-1, -1, 3}).contiguous();
  return img;
}

nlohmann::json intent_json(const IntentLabel& label) {
  return {{"class_index", label.class_index}, {"class_name", label.class_name}, {"probabilities", label.probabilities}};
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Audio-commanded surgical instrument segmentation"};
  app.require_subcommand(1);
  std::string data;

  auto* gen = app.add_subcommand("gen-data", "Write the synthetic scene and command benchmark");
  SynthConfig synth;
  gen->add_option("--out", data, "Output root (default: $ASISEG_DATA_DIR)");
  gen->add_option("--seed", synth.seed);
  gen->add_option("--n-train", synth.n_train);
  gen->add_option("--n-val", synth.n_val);
  gen->add_option("--classes", synth.num_classes);
  gen->add_option("--image-size", synth.image_size);
  gen->add_option("--max-instruments", synth.max_instruments);
  gen->add_option("--noise", synth.noise_level);

  auto* tr = app.add_subcommand("train", "Train on <data>/train and write a checkpoint");
  TrainConfig tc;
  ModelConfig mc;
  std::string checkpoint, bank_file, log_file;
  bool no_bank = false, raw_background = false, no_contrastive = false;
  tr->add_option("--data", data);
  tr->add_option("--checkpoint", checkpoint, "Output path (default: <data>/asiseg.ckpt)");
  tr->add_option("--epochs", tc.epochs);
  tr->add_option("--lr", tc.learning_rate);
  tr->add_option("--batch-size", tc.batch_size);
  tr->add_option("--tau", tc.tau);
  tr->add_option("--seed", tc.seed, "Seeds both initialisation and batch order");
  tr->add_option("--bank", bank_file, "Description bank JSON (default: built-in bank)");
  tr->add_option("--log", log_file, "Also write the per-epoch log here");
  tr->add_flag("--no-bank", no_bank, "Queries from the learnable embeddings only");
  tr->add_flag("--no-contrastive", no_contrastive, "Dice-only segmentation objective");
  tr->add_flag("--raw-background", raw_background, "Background prompts from unrefined features");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  std::string mode = "intention", split = "val", format = "json", perturb;
  double mispronounce = 0.0, magnitude = 0.0, snr_db = 0.0;
  uint64_t eval_seed = 1234;
  std::vector<std::string> kinds = {"noise", "time_warp", "segment_swap"};
  std::vector<double> magnitudes = {0.0, 0.1, 0.3};
  ev->add_option("--data", data);
  ev->add_option("--checkpoint", checkpoint);
  ev->add_option("--mode", mode)->check(CLI::IsMember({"intention", "semantic", "robustness"}));
  ev->add_option("--split", split);
  ev->add_option("--format", format)->check(CLI::IsMember({"json", "table"}));
  ev->add_option("--mispronounce", mispronounce, "Regenerate commands at this mispronunciation level");
  auto* snr_opt = ev->add_option("--snr", snr_db, "Add white noise at this SNR (dB)");
  auto* perturb_opt = ev->add_option("--perturb", perturb, "noise | time_warp | segment_swap");
  ev->add_option("--magnitude", magnitude);
  ev->add_option("--eval-seed", eval_seed);
  ev->add_option("--kinds", kinds, "Robustness mode perturbation kinds");
  ev->add_option("--magnitudes", magnitudes, "Robustness mode magnitudes");
  snr_opt->excludes(perturb_opt);

  auto* seg = app.add_subcommand("segment", "Segment the instrument named by an audio command");
  std::string image_file, audio_file, out_file;
  seg->add_option("--image", image_file)->required();
  seg->add_option("--audio", audio_file)->required();
  seg->add_option("--checkpoint", checkpoint);
  seg->add_option("--out", out_file)->required();
  seg->add_option("--bank", bank_file, "Expected description bank; must match the checkpoint's K");
  seg->add_option("--data", data);

  auto* in = app.add_subcommand("intent", "Classify an audio command");
  in->add_option("--audio", audio_file)->required();
  in->add_option("--checkpoint", checkpoint);
  in->add_option("--data", data);

  auto* bank = app.add_subcommand("bank", "Description bank utilities");
  auto* validate = bank->add_subcommand("validate", "Check a description bank file");
  int expected_classes = 0;
  validate->add_option("--file", bank_file)->required();
  validate->add_option("--classes", expected_classes);
  bank->require_subcommand(1);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::Success&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    error_line(err, "usage_error", e.what());
    return 2;
  }
  if (data.empty()) data = default_data_dir();

  try {
    if (*gen) {
      nlohmann::json splits = nlohmann::json::array();
      for (const auto& m : generate_dataset(synth, data)) {
        splits.push_back({{"split", m.split}, {"n", m.ids.size()}, {"checksum", m.checksum}});
      }
      out << nlohmann::json{{"root", data}, {"splits", splits}}.dump() << "\n";
    } else if (*tr) {
      auto bank_entries = bank_file.empty() ? default_bank() : load_bank(bank_file);
      mc.num_classes = bank_entries.num_classes();
      mc.seed = tc.seed;
      mc.use_bank = !no_bank;
      mc.background_refined = !raw_background;
      tc.use_contrastive = !no_contrastive;
      tc.validate();
      auto dataset = load_split(data, "train", mc.num_classes);
      AsiSeg model(mc, bank_entries);
      std::ofstream log;
      if (!log_file.empty()) {
        log.open(log_file);
        check(static_cast<bool>(log), ErrorCode::kIo, "cannot write " + log_file);
      }
      train(model, dataset, tc, [&](const EpochLog& e) {
        const auto line = to_json(e).dump();
        out << line << "\n" << std::flush;
        if (log) log << line << "\n";
      });
      save_checkpoint(checkpoint_or_default(checkpoint, data), model);
    } else if (*ev) {
      auto model = load_checkpoint(checkpoint_or_default(checkpoint, data));
      auto dataset = load_split(data, split, model->num_classes());
      AudioCondition condition{mispronounce, std::nullopt, 0.0, eval_seed};
      if (snr_opt->count() > 0) {
        condition.perturb = PerturbKind::kNoise;
        condition.magnitude = noise_magnitude_for_snr(snr_db);
      } else if (!perturb.empty()) {
        condition.perturb = parse_perturb_kind(perturb);
        condition.magnitude = magnitude;
      }
      if (mode == "robustness") {
        std::vector<PerturbKind> parsed;
        for (const auto& k : kinds) parsed.push_back(parse_perturb_kind(k));
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& r : robustness_sweep(*model, dataset, parsed, magnitudes, condition)) rows.push_back(to_json(r));
        if (format == "json") {
          out << rows.dump() << "\n";
        } else {
          char line[128];
          std::snprintf(line, sizeof line, "%-14s %10s %16s %10s\n", "kind", "magnitude", "intent_accuracy", "mc_iou");
          out << line;
          for (const auto& r : rows) {
            std::snprintf(line, sizeof line, "%-14s %10.3f %16.4f %10.4f\n", r["kind"].get<std::string>().c_str(),
                          r["magnitude"].get<double>(), r["intent_accuracy"].get<double>(), r["mc_iou"].get<double>());
            out << line;
          }
        }
      } else {
        auto report = mode == "intention" ? evaluate_intention(*model, dataset, condition)
                                          : evaluate_semantic(*model, dataset);
        if (format == "json") {
          auto j = to_json(report);
          j["mode"] = mode;
          out << j.dump() << "\n";
        } else {
          out << format_table(report, model->bank().class_names());
        }
      }
    } else if (*seg) {
      auto model = load_checkpoint(checkpoint_or_default(checkpoint, data));
      if (!bank_file.empty()) {
        const auto expected = load_bank(bank_file);
        check(expected.num_classes() == model->num_classes(), ErrorCode::kConfig,
              "checkpoint has K=" + std::to_string(model->num_classes()) + ", bank has K=" +
                  std::to_string(expected.num_classes()));
      }
      auto [label, logits] = model->run(read_rgb(image_file), read_wav(audio_file));
      auto mask = threshold(logits);
      write_png(out_file, (mask.values * 255).to(torch::kUInt8));
      auto j = intent_json(label);
      j["mask"] = out_file;
      j["foreground_pixels"] = mask.values.sum().item<int64_t>();
      out << j.dump() << "\n";
    } else if (*in) {
      auto model = load_checkpoint(checkpoint_or_default(checkpoint, data));
      out << intent_json(model->infer_intent(read_wav(audio_file))).dump() << "\n";
    } else if (*validate) {
      auto b = load_bank(bank_file, expected_classes);
      out << nlohmann::json{{"valid", true}, {"K", b.num_classes()}, {"classes", b.class_names()}}.dump() << "\n";
    }
  } catch (const Error& e) {
    error_line(err, error_code_name(e.code()), e.what());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    error_line(err, "internal_error", e.what());
    return 1;
  }
  return 0;
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace asiseg
