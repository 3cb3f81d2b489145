#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <memory>

#include <json.hpp>

#include "moesim/error.hpp"
#include "moesim/trace.hpp"

namespace moesim {

namespace {

bool is_gzip(const std::filesystem::path& path) { return path.extension() == ".gz"; }

struct GzCloser {
  void operator()(gzFile f) const {
    if (f) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

// Line source over a plain or gzip-compressed file.
class LineReader {
 public:
  explicit LineReader(const std::filesystem::path& path) {
    if (is_gzip(path)) {
      gz_.reset(gzopen(path.c_str(), "rb"));
      if (!gz_) throw TraceError("cannot open " + path.string());
    } else {
      plain_.open(path);
      if (!plain_) throw TraceError("cannot open " + path.string());
    }
  }

  bool next(std::string& line) {
    if (!gz_) return static_cast<bool>(std::getline(plain_, line));
    line.clear();
    char buf[4096];
    while (gzgets(gz_.get(), buf, sizeof buf) != nullptr) {
      line.append(buf);
      if (!line.empty() && line.back() == '\n') {
        line.pop_back();
        return true;
      }
    }
    return !line.empty();
  }

 private:
  GzHandle gz_;
  std::ifstream plain_;
};

void append_record(std::string& out, int t, int l, std::span<const ExpertId> experts) {
  out += "{\"t\":";
  out += std::to_string(t);
  out += ",\"l\":";
  out += std::to_string(l);
  out += ",\"e\":[";
  for (std::size_t i = 0; i < experts.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(experts[i]);
  }
  out += "]}\n";
}

std::string header_line(const RoutingTrace& trace) {
  nlohmann::ordered_json h;
  h["model"] = trace.model_name();
  h["layers"] = trace.num_layers();
  h["experts"] = trace.experts_per_layer();
  h["k"] = trace.top_k();
  return h.dump() + "\n";
}

std::string where(const std::filesystem::path& path, std::size_t line_no) {
  return path.string() + ":" + std::to_string(line_no) + ": ";
}

}  // namespace

std::string serialize_trace(const RoutingTrace& trace) {
  std::string out = header_line(trace);
  out.reserve(out.size() + trace.record_count() * 24);
  for (int t = 0; t < trace.tokens(); ++t) {
    for (int l = 0; l < trace.num_layers(); ++l) append_record(out, t, l, trace.selection(t, l));
  }
  return out;
}

void write_trace(const RoutingTrace& trace, const std::filesystem::path& path) {
  const std::string body = serialize_trace(trace);
  if (is_gzip(path)) {
    GzHandle gz(gzopen(path.c_str(), "wb"));
    if (!gz) throw Error("cannot write " + path.string());
    if (gzwrite(gz.get(), body.data(), static_cast<unsigned>(body.size())) != static_cast<int>(body.size())) {
      throw Error("short write to " + path.string());
    }
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!out) throw Error("short write to " + path.string());
}

RoutingTrace parse_trace(const std::filesystem::path& path, const ModelSpec& model) {
  LineReader reader(path);
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::vector<RoutingRecord> records;
  int max_token = -1;

  while (reader.next(line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw TraceError(where(path, line_no) + "malformed JSON: " + e.what());
    }
    if (!obj.is_object()) throw TraceError(where(path, line_no) + "expected a JSON object");

    if (!have_header) {
      if (!obj.contains("model")) throw TraceError(where(path, line_no) + "missing header line");
      try {
        const int layers = obj.at("layers").get<int>();
        const int experts = obj.at("experts").get<int>();
        const int k = obj.at("k").get<int>();
        if (layers != model.num_layers || experts != model.experts_per_layer || k != model.top_k) {
          throw TraceError(where(path, line_no) + "header shape does not match model '" + model.name + "'");
        }
      } catch (const nlohmann::json::exception& e) {
        throw TraceError(where(path, line_no) + "bad header: " + e.what());
      }
      have_header = true;
      continue;
    }

    RoutingRecord rec;
    try {
      rec.token = obj.at("t").get<int>();
      rec.layer = obj.at("l").get<int>();
      rec.experts = obj.at("e").get<std::vector<ExpertId>>();
    } catch (const nlohmann::json::exception& e) {
      throw TraceError(where(path, line_no) + "bad record: " + e.what());
    }
    if (rec.token < 0) throw TraceError(where(path, line_no) + "negative token index");
    if (rec.layer < 0 || rec.layer >= model.num_layers) {
      throw TraceError(where(path, line_no) + "layer " + std::to_string(rec.layer) + " out of range");
    }
    if (static_cast<int>(rec.experts.size()) != model.top_k) {
      throw TraceError(where(path, line_no) + "expected " + std::to_string(model.top_k) + " experts, got " +
                       std::to_string(rec.experts.size()));
    }
    for (std::size_t i = 0; i < rec.experts.size(); ++i) {
      const ExpertId e = rec.experts[i];
      if (e < 0 || e >= model.experts_per_layer) {
        throw TraceError(where(path, line_no) + "expert id " + std::to_string(e) + " out of range");
      }
      for (std::size_t j = 0; j < i; ++j) {
        if (rec.experts[j] == e) {
          throw TraceError(where(path, line_no) + "duplicate expert " + std::to_string(e) + " in record");
        }
      }
    }
    max_token = std::max(max_token, rec.token);
    records.push_back(std::move(rec));
  }
  if (!have_header) throw TraceError(path.string() + ": empty trace file");
  if (records.empty()) throw TraceError(path.string() + ": trace has no records");

  RoutingTrace trace(model.name, model.num_layers, model.experts_per_layer, model.top_k, max_token + 1);
  std::vector<char> seen(trace.record_count(), 0);
  for (const auto& rec : records) {
    const std::size_t idx = static_cast<std::size_t>(rec.token) * model.num_layers + rec.layer;
    if (seen[idx]) {
      throw TraceError(path.string() + ": duplicate record (t=" + std::to_string(rec.token) +
                       ", l=" + std::to_string(rec.layer) + ")");
    }
    seen[idx] = 1;
    std::copy(rec.experts.begin(), rec.experts.end(), trace.selection(rec.token, rec.layer).begin());
  }
  for (std::size_t idx = 0; idx < seen.size(); ++idx) {
    if (!seen[idx]) {
      throw TraceError(path.string() + ": incomplete trace, missing (t=" +
                       std::to_string(idx / model.num_layers) + ", l=" +
                       std::to_string(idx % model.num_layers) + ")");
    }
  }
  return trace;
}

}  // namespace moesim
