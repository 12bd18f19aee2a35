#include "attrib/render.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "attrib/eval.hpp"

namespace attrib {

namespace {

std::string escape_html(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string row(const Vocab& vocab, const char* label, const AttributionMap& map) {
    const auto scores = normalize_map(map.scores, Normalization::signed_max);
    std::string out = "<p><b>" + std::string(label) + "</b> " + escape_html(to_string(map.method)) + "</p><p>";
    for (std::size_t t = 0; t < map.tokens.size(); ++t) {
        out += "<span style=\"background:" + heat_color(scores[t]) + ";padding:2px;margin:1px";
        if (map.tokens[t] == vocab.pad) {
            out += ";opacity:0.35";
        }
        out += "\">" + escape_html(vocab.token_text(map.tokens[t])) + "</span>";
    }
    return out + "</p>";
}

}  // namespace

std::string heat_color(double normalized) {
    if (!std::isfinite(normalized) || std::abs(normalized) > 1.0) {
        throw std::invalid_argument("heat_color: score must lie in [-1, 1]");
    }
    if (normalized == 0.0) {
        return "#ffffff";
    }
    char buf[48];
    std::snprintf(buf, sizeof buf, "rgba(%s,%.4f)", normalized > 0.0 ? "255,0,0" : "0,0,255", std::abs(normalized));
    return buf;
}

std::string render_heatmap(const Vocab& vocab, const AttributionMap& target, const AttributionMap& empirical) {
    if (target.instance_id != empirical.instance_id) {
        throw std::invalid_argument("render: instance ids differ (" + std::to_string(target.instance_id) + " vs " +
                                    std::to_string(empirical.instance_id) + ")");
    }
    if (target.tokens != empirical.tokens) {
        throw std::invalid_argument("render: instance " + std::to_string(target.instance_id) +
                                    " has different token sequences in the two files");
    }
    return "<!DOCTYPE html><html><head><meta charset=\"utf-8\"><title>instance " +
           std::to_string(target.instance_id) + "</title></head><body style=\"font-family:monospace\">" +
           row(vocab, "target", target) + row(vocab, "empirical", empirical) + "</body></html>";
}

std::string render_heatmaps(const Vocab& vocab, std::span<const AttributionMap> targets,
                            std::span<const AttributionMap> empirical) {
    if (targets.size() != empirical.size()) {
        throw std::invalid_argument("render: " + std::to_string(targets.size()) + " target maps but " +
                                    std::to_string(empirical.size()) + " empirical maps");
    }
    std::string out;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        out += render_heatmap(vocab, targets[i], empirical[i]) + "\n";
    }
    return out;
}

}  // namespace attrib
