#include "hybridvc/pipeline.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

namespace hvc::pipeline {

namespace {

double per_pixel(std::uint64_t bits, int w, int h, int t) {
  return metrics::bpp(bits, w, h, t);
}

Frame as_rgb(Frame f) {
  if (f.color_space() == ColorSpace::kYCbCr444) f = ycbcr_to_rgb(f);
  if (f.channels() == 1) {
    Frame rgb(f.width(), f.height(), 3, ColorSpace::kRGB, f.bit_depth());
    for (int c = 0; c < 3; ++c) {
      std::copy(f.plane(0).begin(), f.plane(0).end(), rgb.plane(c).begin());
    }
    f = std::move(rgb);
  }
  return f;
}

codecs::CodecConfig lossless_for(container::CodecId id, const DecodeOptions& opt) {
  if (id == container::CodecId::kMockLossless) return codecs::CodecConfig::mock_lossless();
  if (id == container::CodecId::kExternalLossless) return opt.external_lossless;
  throw FormatError("reference entry has a lossy codec id");
}

}  // namespace

double EncodeReport::lossy_bpp() const { return per_pixel(lossy_bits, width, height, frame_count); }
double EncodeReport::ref_bpp() const { return per_pixel(ref_bits, width, height, frame_count); }
double EncodeReport::framing_bpp() const {
  return per_pixel(framing_bits, width, height, frame_count);
}
double EncodeReport::total_bpp() const { return per_pixel(total_bits, width, height, frame_count); }

EncodeReport encode(const VideoSequence& video, const EncodeOptions& opt) {
  video.validate();
  if (opt.lossy.is_lossless()) throw ValidationError("lossy codec expected for the video stream");
  if (!opt.lossless.is_lossless()) throw ValidationError("lossless codec expected for references");

  EncodeReport r;
  r.width = video.width();
  r.height = video.height();
  r.frame_count = video.frame_count();
  std::vector<int> refs{0};
  if (opt.policy == scenedetect::ReferencePolicy::kSceneCut && video.frame_count() >= 2) {
    const auto cuts = scenedetect::detect_cuts(video, opt.scene_threshold, opt.min_scene_len);
    refs = scenedetect::select_references(video.frame_count(), cuts, opt.policy);
  }
  r.ref_indices = refs;

  const auto enc = codecs::encode_video(video, opt.lossy);
  std::vector<container::ReferenceEntry> entries;
  for (int idx : refs) {
    container::ReferenceEntry e;
    e.frame_index = static_cast<std::uint32_t>(idx);
    e.codec_id = opt.lossless.codec_id;
    e.payload = codecs::encode_reference(video.frames[idx], opt.lossless);
    r.ref_bits += 8ULL * e.payload.size();
    entries.push_back(std::move(e));
  }
  container::StreamMeta meta;
  meta.lossy_codec_id = opt.lossy.codec_id;
  meta.width = static_cast<std::uint32_t>(video.width());
  meta.height = static_cast<std::uint32_t>(video.height());
  meta.frame_count = static_cast<std::uint32_t>(video.frame_count());
  r.container = container::mux(enc.bitstream, std::move(entries), meta);
  r.lossy_bits = enc.rate_bits;
  r.lossy_stream_bytes = enc.bitstream.size();
  r.framing_bits = 8ULL * container::framing_bytes(refs.size());
  r.total_bits = r.lossy_bits + r.ref_bits + r.framing_bits;
  return r;
}

DecodeMode decode_mode_from_string(const std::string& s) {
  if (s == "raw") return DecodeMode::kRaw;
  if (s == "step1") return DecodeMode::kStep1;
  if (s == "step2") return DecodeMode::kStep2;
  throw ValidationError("unknown decode mode '" + s + "'");
}

std::string to_string(DecodeMode m) {
  switch (m) {
    case DecodeMode::kRaw: return "raw";
    case DecodeMode::kStep1: return "step1";
    case DecodeMode::kStep2: return "step2";
  }
  return "?";
}

Decoded decode(const std::vector<std::uint8_t>& bytes, const DecodeOptions& opt) {
  const auto hc = container::demux(bytes);
  codecs::CodecConfig lossy;
  if (hc.meta.lossy_codec_id == container::CodecId::kMockLossy) {
    lossy = codecs::CodecConfig::mock_lossy(50);
  } else {
    lossy = opt.external_video;
  }
  Decoded out;
  const codecs::StreamGeometry geom{static_cast<int>(hc.meta.width),
                                    static_cast<int>(hc.meta.height),
                                    static_cast<int>(hc.meta.frame_count), opt.fps};
  VideoSequence raw = codecs::decode_video(hc.lossy_bitstream, lossy, geom);
  if (raw.frame_count() != geom.frame_count || raw.width() != geom.width ||
      raw.height() != geom.height) {
    throw FormatError("decoded stream does not match the container geometry");
  }
  for (auto& f : raw.frames) f = as_rgb(std::move(f));
  for (const auto& e : hc.references) out.ref_indices.push_back(static_cast<int>(e.frame_index));

  if (opt.mode == DecodeMode::kRaw) {
    for (auto& f : raw.frames) quantize_to_bit_depth(f);
    out.video = std::move(raw);
    return out;
  }
  if (opt.weights == nullptr) throw ValidationError("restoration needs a checkpoint");

  restoration::ReferenceCache cache(*opt.weights);
  if (opt.mode == DecodeMode::kStep2) {
    for (const auto& e : hc.references) {
      Frame ref = as_rgb(codecs::decode_reference(e.payload, lossless_for(e.codec_id, opt)));
      if (ref.width() != geom.width || ref.height() != geom.height) {
        throw FormatError("reference frame size differs from the video");
      }
      cache.add(static_cast<int>(e.frame_index), ref);
    }
  }
  const auto mode = opt.mode == DecodeMode::kStep1 ? restoration::Mode::kStep1
                                                   : restoration::Mode::kStep2;
  out.video.fps = raw.fps;
  out.video.frames.resize(raw.frames.size());
  const int n = raw.frame_count();
  // Frames are independent given the read-only cache.
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, opt.workers))
  for (int t = 0; t < n; ++t) {
    Frame f = restoration::restore_frame(raw.frames[t], &cache, *opt.weights, mode, t, opt.restore);
    quantize_to_bit_depth(f);
    out.video.frames[t] = std::move(f);
  }
  out.reference_encoder_passes = cache.encoder_passes();
  return out;
}

std::string EvalPoint::label() const { return method + "@" + std::to_string(quality); }

std::vector<EvalPoint> evaluate_rd(const VideoSequence& video, const EvalOptions& opt) {
  if (opt.qualities.empty()) throw ValidationError("eval needs at least one quality point");
  if (!opt.lossy_for) throw ValidationError("eval needs a lossy codec factory");
  const bool ms_ok = std::min(video.width(), video.height()) >= metrics::kMsSsimMinSide;
  std::vector<EvalPoint> points;
  for (int q : opt.qualities) {
    EncodeOptions eo;
    eo.lossy = opt.lossy_for(q);
    eo.lossless = opt.lossless;
    eo.policy = opt.policy;
    const EncodeReport rep = encode(video, eo);
    std::vector<DecodeMode> modes{DecodeMode::kRaw};
    if (opt.weights != nullptr) {
      modes.push_back(DecodeMode::kStep1);
      modes.push_back(DecodeMode::kStep2);
    }
    for (DecodeMode m : modes) {
      DecodeOptions dopt;
      dopt.mode = m;
      dopt.weights = opt.weights;
      dopt.fps = video.fps;
      dopt.workers = opt.workers;
      if (eo.lossy.is_external()) dopt.external_video = eo.lossy;
      if (opt.lossless.is_external()) dopt.external_lossless = opt.lossless;
      const Decoded dec = decode(rep.container, dopt);
      EvalPoint p;
      p.method = to_string(m);
      p.quality = q;
      p.bpp = m == DecodeMode::kStep2 ? rep.total_bpp() : rep.lossy_bpp();
      p.psnr_rgb = metrics::psnr(dec.video, video, metrics::PsnrMode::kRgb);
      p.psnr_y = metrics::psnr(dec.video, video, metrics::PsnrMode::kLuma);
      p.ms_ssim = ms_ok ? metrics::ms_ssim(dec.video, video)
                        : std::numeric_limits<double>::quiet_NaN();
      points.push_back(p);
    }
  }
  return points;
}

metrics::RDCurve curve_for(const std::vector<EvalPoint>& points, const std::string& method,
                           metrics::MetricKind kind) {
  metrics::RDCurve c;
  c.kind = kind;
  for (const auto& p : points) {
    if (p.method != method) continue;
    c.points.push_back({p.bpp, kind == metrics::MetricKind::kPsnr ? p.psnr_rgb : p.ms_ssim,
                        p.label()});
  }
  return c;
}

std::string rd_svg(const std::vector<EvalPoint>& points) {
  constexpr double kW = 640, kH = 420, kM = 56;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& p : points) {
    if (!std::isfinite(p.psnr_rgb)) continue;
    x0 = std::min(x0, p.bpp);
    x1 = std::max(x1, p.bpp);
    y0 = std::min(y0, p.psnr_rgb);
    y1 = std::max(y1, p.psnr_rgb);
  }
  if (!(x1 > x0)) x1 = x0 + 1;
  if (!(y1 > y0)) y1 = y0 + 1;
  auto sx = [&](double v) { return kM + (v - x0) / (x1 - x0) * (kW - 2 * kM); };
  auto sy = [&](double v) { return kH - kM - (v - y0) / (y1 - y0) * (kH - 2 * kM); };

  std::map<std::string, std::vector<const EvalPoint*>> by_method;
  for (const auto& p : points) {
    if (std::isfinite(p.psnr_rgb)) by_method[p.method].push_back(&p);
  }
  static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << kM << "\" y1=\"" << kH - kM << "\" x2=\"" << kW - kM << "\" y2=\""
    << kH - kM << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << kM << "\" y1=\"" << kM << "\" x2=\"" << kM << "\" y2=\"" << kH - kM
    << "\" stroke=\"black\"/>\n";
  char buf[64];
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
    std::snprintf(buf, sizeof buf, "%.4g", xv);
    s << "<text x=\"" << sx(xv) << "\" y=\"" << kH - kM + 16 << "\" text-anchor=\"middle\">"
      << buf << "</text>\n";
    std::snprintf(buf, sizeof buf, "%.2f", yv);
    s << "<text x=\"" << kM - 6 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">" << buf
      << "</text>\n";
  }
  s << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">bpp</text>\n";
  s << "<text x=\"14\" y=\"" << kH / 2 << "\" transform=\"rotate(-90 14 " << kH / 2
    << ")\" text-anchor=\"middle\">PSNR (dB)</text>\n";
  int k = 0;
  for (auto& [method, pts] : by_method) {
    std::sort(pts.begin(), pts.end(), [](auto* a, auto* b) { return a->bpp < b->bpp; });
    const char* col = colours[k % 5];
    s << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"";
    for (const auto* p : pts) s << sx(p->bpp) << "," << sy(p->psnr_rgb) << " ";
    s << "\"/>\n";
    for (const auto* p : pts) {
      s << "<circle cx=\"" << sx(p->bpp) << "\" cy=\"" << sy(p->psnr_rgb)
        << "\" r=\"3\" fill=\"" << col << "\"/>\n";
    }
    s << "<text x=\"" << kW - kM - 70 << "\" y=\"" << kM + 16 * k << "\" fill=\"" << col
      << "\">" << method << "</text>\n";
    ++k;
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace hvc::pipeline
