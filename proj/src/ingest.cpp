#include "synermed/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace synermed::ingest {

using json = nlohmann::json;
using domain::route_by_id;

// ---------------------------------------------------------------------------
// PGM
// ---------------------------------------------------------------------------

namespace {

struct ByteReader {
    std::span<const std::uint8_t> bytes;
    size_t pos = 0;

    bool eof() const { return pos >= bytes.size(); }
    int peek() const { return eof() ? -1 : bytes[pos]; }
    int get() { return eof() ? -1 : bytes[pos++]; }

    // Skips whitespace and '#' comments (to end of line).
    void skip_space_and_comments() {
        while (!eof()) {
            int c = peek();
            if (c == '#') {
                while (!eof() && get() != '\n') {
                }
            } else if (std::isspace(c)) {
                ++pos;
            } else {
                break;
            }
        }
    }

    long read_number(const char* what) {
        skip_space_and_comments();
        if (eof() || !std::isdigit(peek())) {
            fail(ErrorKind::Data, "MalformedHeader",
                 std::string("expected numeric ") + what + " in PGM header");
        }
        long value = 0;
        while (!eof() && std::isdigit(peek())) {
            value = value * 10 + (get() - '0');
            if (value > 1000000000L) {
                fail(ErrorKind::Data, "MalformedHeader",
                     std::string("unreasonable ") + what + " in PGM header");
            }
        }
        return value;
    }
};

}  // namespace

Image2D parse_pgm(std::span<const std::uint8_t> bytes) {
    ByteReader r{bytes};
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
        fail(ErrorKind::Data, "MalformedHeader", "not a binary PGM (magic must be P5)");
    }
    r.pos = 2;
    long width = r.read_number("width");
    long height = r.read_number("height");
    long maxval = r.read_number("maxval");
    if (width <= 0 || height <= 0) {
        fail(ErrorKind::Data, "MalformedHeader", "PGM dimensions must be positive");
    }
    if (maxval != 255 && maxval != 65535) {
        fail(ErrorKind::Data, "UnsupportedMaxval",
             "PGM maxval must be 255 or 65535, got " + std::to_string(maxval));
    }
    // Exactly one whitespace byte separates the header from the payload.
    int sep = r.get();
    if (sep < 0 || !std::isspace(sep)) {
        fail(ErrorKind::Data, "MalformedHeader", "missing separator before PGM payload");
    }

    size_t n = static_cast<size_t>(width) * static_cast<size_t>(height);
    size_t bytes_per_sample = maxval == 255 ? 1 : 2;
    if (bytes.size() - r.pos < n * bytes_per_sample) {
        fail(ErrorKind::Data, "TruncatedPayload",
             "PGM payload has fewer than width*height samples");
    }

    Image2D img(static_cast<int>(width), static_cast<int>(height));
    const std::uint8_t* p = bytes.data() + r.pos;
    double denom = static_cast<double>(maxval);
    if (maxval == 255) {
        for (size_t i = 0; i < n; ++i) img.data[i] = p[i] / denom;
    } else {
        for (size_t i = 0; i < n; ++i) {
            // 16-bit samples are big-endian per the PGM convention.
            unsigned v = (static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1];
            img.data[i] = v / denom;
        }
    }
    return img;
}

Image2D parse_pgm_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Data, "IoError", "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return parse_pgm(bytes);
}

std::vector<std::uint8_t> write_pgm(const Image2D& img, int maxval) {
    img.validate();
    if (maxval != 255 && maxval != 65535) {
        fail(ErrorKind::Usage, "UnsupportedMaxval", "write_pgm maxval must be 255 or 65535");
    }
    std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                         "\n" + std::to_string(maxval) + "\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + img.data.size() * (maxval == 255 ? 1 : 2));
    for (double v : img.data) {
        long q = std::lround(v * maxval);
        q = std::clamp(q, 0L, static_cast<long>(maxval));
        if (maxval == 255) {
            out.push_back(static_cast<std::uint8_t>(q));
        } else {
            out.push_back(static_cast<std::uint8_t>(q >> 8));
            out.push_back(static_cast<std::uint8_t>(q & 0xFF));
        }
    }
    return out;
}

void write_pgm_file(const std::filesystem::path& path, const Image2D& img, int maxval) {
    std::vector<std::uint8_t> bytes = write_pgm(img, maxval);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Data, "IoError", "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::Data, "IoError", "short write to " + path.string());
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

const VolumeRef& CorpusManifest::volume(const std::string& volume_id) const {
    for (const VolumeRef& v : volumes) {
        if (v.volume_id == volume_id) return v;
    }
    fail(ErrorKind::Data, "ConstraintError", "unknown volume_id: " + volume_id);
}

bool CorpusManifest::has_volume(const std::string& volume_id) const {
    return std::any_of(volumes.begin(), volumes.end(),
                       [&](const VolumeRef& v) { return v.volume_id == volume_id; });
}

std::vector<VolumePair> CorpusManifest::resolved_pairs() const {
    std::vector<VolumePair> out;
    out.reserve(pairs.size());
    for (const PairEntry& p : pairs) {
        out.push_back({p.pair_id, route_by_id(p.route_id), volume(p.src_volume_id),
                       volume(p.tgt_volume_id)});
    }
    return out;
}

void CorpusManifest::validate() const {
    std::set<std::string> volume_ids;
    for (const VolumeRef& v : volumes) {
        if (!volume_ids.insert(v.volume_id).second) {
            fail(ErrorKind::Data, "ConstraintError", "duplicate volume_id: " + v.volume_id);
        }
        if (v.slice_paths.empty()) {
            fail(ErrorKind::Data, "ConstraintError", v.volume_id + ": volume has no slices");
        }
        if (v.width <= 0 || v.height <= 0) {
            fail(ErrorKind::Data, "ConstraintError", v.volume_id + ": non-positive dimensions");
        }
        if (!(v.intensity_window[0] < v.intensity_window[1])) {
            fail(ErrorKind::Data, "ConstraintError",
                 v.volume_id + ": intensity window requires lo < hi");
        }
        if (!dataset_allows(v.dataset, v.modality)) {
            fail(ErrorKind::Data, "ConstraintError",
                 v.volume_id + ": modality not allowed for dataset " +
                     domain::dataset_token(v.dataset));
        }
    }
    std::set<std::string> pair_ids;
    for (const PairEntry& p : pairs) {
        if (!pair_ids.insert(p.pair_id).second) {
            fail(ErrorKind::Data, "ConstraintError", "duplicate pair_id: " + p.pair_id);
        }
        if (!domain::route_exists(p.route_id)) {
            fail(ErrorKind::Data, "ConstraintError",
                 p.pair_id + ": unknown route_id " + p.route_id);
        }
        if (!has_volume(p.src_volume_id) || !has_volume(p.tgt_volume_id)) {
            fail(ErrorKind::Data, "ConstraintError",
                 p.pair_id + ": pair references a missing volume");
        }
        const Route& route = route_by_id(p.route_id);
        const VolumeRef& src = volume(p.src_volume_id);
        const VolumeRef& tgt = volume(p.tgt_volume_id);
        if (src.modality != route.src || tgt.modality != route.tgt) {
            fail(ErrorKind::Data, "ConstraintError",
                 p.pair_id + ": volume modalities do not match route " + p.route_id);
        }
        if (src.dataset != route.dataset || tgt.dataset != route.dataset) {
            fail(ErrorKind::Data, "ConstraintError",
                 p.pair_id + ": volume datasets do not match route " + p.route_id);
        }
        if (src.slice_count() != tgt.slice_count()) {
            fail(ErrorKind::Data, "ConstraintError",
                 p.pair_id + ": src/tgt slice counts differ (slice alignment is 1:1)");
        }
        if (src.width != tgt.width || src.height != tgt.height) {
            fail(ErrorKind::Data, "ConstraintError",
                 p.pair_id + ": src/tgt slice dimensions differ");
        }
    }
}

namespace {

[[noreturn]] void schema_fail(const std::string& pointer, const std::string& message) {
    fail(ErrorKind::Data, "SchemaError", "at " + pointer + ": " + message);
}

const json& require_field(const json& obj, const std::string& pointer, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end()) schema_fail(pointer, std::string("missing key \"") + key + "\"");
    return *it;
}

std::string require_string(const json& obj, const std::string& pointer, const char* key) {
    const json& v = require_field(obj, pointer, key);
    if (!v.is_string()) schema_fail(pointer + "/" + key, "expected a string");
    return v.get<std::string>();
}

int require_int(const json& obj, const std::string& pointer, const char* key) {
    const json& v = require_field(obj, pointer, key);
    if (!v.is_number_integer()) schema_fail(pointer + "/" + key, "expected an integer");
    return v.get<int>();
}

}  // namespace

CorpusManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Data, "IoError", "cannot open manifest " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        fail(ErrorKind::Data, "SchemaError", "manifest is not valid JSON: " + std::string(e.what()));
    }
    if (!doc.is_object()) schema_fail("", "manifest root must be an object");

    CorpusManifest m;
    m.base_dir = path.parent_path();
    m.schema_version = require_int(doc, "", "schema_version");
    if (m.schema_version != 1) {
        schema_fail("/schema_version", "unsupported schema_version " +
                                           std::to_string(m.schema_version));
    }

    const json& volumes = require_field(doc, "", "volumes");
    if (!volumes.is_array()) schema_fail("/volumes", "expected an array");
    for (size_t i = 0; i < volumes.size(); ++i) {
        std::string ptr = "/volumes/" + std::to_string(i);
        const json& jv = volumes[i];
        if (!jv.is_object()) schema_fail(ptr, "expected an object");
        VolumeRef v;
        v.volume_id = require_string(jv, ptr, "volume_id");
        v.dataset = domain::dataset_from_token(require_string(jv, ptr, "dataset"));
        v.modality = domain::modality_from_token(require_string(jv, ptr, "modality"));
        v.width = require_int(jv, ptr, "width");
        v.height = require_int(jv, ptr, "height");
        const json& win = require_field(jv, ptr, "intensity_window");
        if (!win.is_array() || win.size() != 2 || !win[0].is_number() || !win[1].is_number()) {
            schema_fail(ptr + "/intensity_window", "expected [lo, hi] numbers");
        }
        v.intensity_window = {win[0].get<double>(), win[1].get<double>()};
        const json& slices = require_field(jv, ptr, "slices");
        if (!slices.is_array() || slices.empty()) {
            schema_fail(ptr + "/slices", "expected a nonempty array of paths");
        }
        for (size_t s = 0; s < slices.size(); ++s) {
            if (!slices[s].is_string()) {
                schema_fail(ptr + "/slices/" + std::to_string(s), "expected a string path");
            }
            v.slice_paths.push_back(slices[s].get<std::string>());
        }
        m.volumes.push_back(std::move(v));
    }

    const json& pairs = require_field(doc, "", "pairs");
    if (!pairs.is_array()) schema_fail("/pairs", "expected an array");
    for (size_t i = 0; i < pairs.size(); ++i) {
        std::string ptr = "/pairs/" + std::to_string(i);
        const json& jp = pairs[i];
        if (!jp.is_object()) schema_fail(ptr, "expected an object");
        PairEntry p;
        p.pair_id = require_string(jp, ptr, "pair_id");
        p.route_id = require_string(jp, ptr, "route_id");
        p.src_volume_id = require_string(jp, ptr, "src_volume_id");
        p.tgt_volume_id = require_string(jp, ptr, "tgt_volume_id");
        m.pairs.push_back(std::move(p));
    }

    m.validate();
    return m;
}

void save_manifest(const CorpusManifest& manifest, const std::filesystem::path& path) {
    nlohmann::ordered_json doc;
    doc["schema_version"] = manifest.schema_version;
    doc["volumes"] = nlohmann::ordered_json::array();
    for (const VolumeRef& v : manifest.volumes) {
        nlohmann::ordered_json jv;
        jv["volume_id"] = v.volume_id;
        jv["dataset"] = domain::dataset_token(v.dataset);
        jv["modality"] = domain::modality_token(v.modality);
        jv["width"] = v.width;
        jv["height"] = v.height;
        jv["intensity_window"] = v.intensity_window;
        jv["slices"] = v.slice_paths;
        doc["volumes"].push_back(std::move(jv));
    }
    doc["pairs"] = nlohmann::ordered_json::array();
    for (const PairEntry& p : manifest.pairs) {
        nlohmann::ordered_json jp;
        jp["pair_id"] = p.pair_id;
        jp["route_id"] = p.route_id;
        jp["src_volume_id"] = p.src_volume_id;
        jp["tgt_volume_id"] = p.tgt_volume_id;
        doc["pairs"].push_back(std::move(jp));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Data, "IoError", "cannot write manifest " + path.string());
    out << doc.dump(2) << "\n";
}

Image2D load_slice(const CorpusManifest& manifest, const VolumeRef& vref, int k) {
    if (k < 0 || k >= vref.slice_count()) {
        fail(ErrorKind::Data, "IndexOutOfRange",
             vref.volume_id + ": slice index " + std::to_string(k) + " out of range");
    }
    Image2D img = parse_pgm_file(manifest.base_dir / vref.slice_paths[static_cast<size_t>(k)]);
    if (img.width != vref.width || img.height != vref.height) {
        fail(ErrorKind::Data, "ConstraintError",
             vref.volume_id + ": slice " + std::to_string(k) +
                 " dimensions do not match the manifest");
    }
    double lo = vref.intensity_window[0];
    double hi = vref.intensity_window[1];
    if (lo != 0.0 || hi != 1.0) {
        double inv = 1.0 / (hi - lo);
        for (double& v : img.data) v = std::clamp((v - lo) * inv, 0.0, 1.0);
    }
    return img;
}

std::pair<std::string, int> parse_image_ref(const std::string& image_ref) {
    size_t hash = image_ref.rfind('#');
    if (hash == std::string::npos || hash == 0 || hash + 1 >= image_ref.size()) {
        fail(ErrorKind::Data, "ConstraintError", "malformed image ref: " + image_ref);
    }
    int k = 0;
    try {
        k = std::stoi(image_ref.substr(hash + 1));
    } catch (const std::exception&) {
        fail(ErrorKind::Data, "ConstraintError", "malformed image ref index: " + image_ref);
    }
    return {image_ref.substr(0, hash), k};
}

std::string make_image_ref(const std::string& volume_id, int k) {
    return volume_id + "#" + std::to_string(k);
}

Image2D load_image_ref(const CorpusManifest& manifest, const std::string& image_ref) {
    auto [volume_id, k] = parse_image_ref(image_ref);
    return load_slice(manifest, manifest.volume(volume_id), k);
}

}  // namespace synermed::ingest
