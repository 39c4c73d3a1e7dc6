// The joint decoding network. One clean window x0 drives three coupled
// heads: a strided-conv encoder whose attention-gated features feed a
// spline classification head, an upsampling decoder whose intermediate maps
// condition a denoising U-Net through 1x1 convs, and a reconstruction conv
// fed by the decoder output together with x0 and the U-Net output. The
// denoiser sees the diffused window x_t and is trained to return x0.
//
// Fixed shape contract: encoder widths 16/32/64, U-Net widths 32/64/128 at
// three resolutions, kernel 5, group norm with 8 groups. The window length
// must be divisible by 8 so the strided stages tile exactly.
#pragma once

#include <vector>

#include "viseme/diffusion.hpp"
#include "viseme/nn.hpp"

namespace viseme::decode {

struct ModelArch {
  Index in_channels = 20;
  Index window = 128;
  Index n_classes = 15;
  Index temb_dim = 32;
  Index kernel = 5;
  int T = 100;
  double beta_lo = 1e-4;
  double beta_hi = 0.02;

  void validate() const {
    if (in_channels < 1) throw validation_error("model needs at least one input channel");
    if (window < 16 || window % 8 != 0)
      throw validation_error("model window must be a multiple of 8 and at least 16, got " +
                             std::to_string(window));
    if (n_classes < 2) throw validation_error("model needs at least two classes");
    if (temb_dim < 2 || temb_dim % 2 != 0)
      throw validation_error("time embedding dimension must be even and positive");
    if (kernel < 1 || kernel % 2 == 0)
      throw validation_error("model kernel must be odd");
    make_schedule(T, beta_lo, beta_hi);  // validates the diffusion knobs
  }
};

struct LossWeights {
  double ddpm = 1.0;
  double ae = 1.0;
  double cls = 1.0;
};

struct LossParts {
  double total = 0.0;
  double ddpm = 0.0;
  double ae = 0.0;
  double cls = 0.0;
};

template <class S>
class VisemeNet {
 public:
  static constexpr Index kEncW1 = 16, kEncW2 = 32, kEncW3 = 64;
  static constexpr Index kUnetW1 = 32, kUnetW2 = 64, kUnetW3 = 128;
  static constexpr Index kGroups = 8;

  explicit VisemeNet(const ModelArch& arch) : arch_(arch) {
    arch.validate();
    const Index C = arch.in_channels;
    const Index K = arch.kernel;
    const Index P = (K - 1) / 2;
    using nn::Conv1d;
    using nn::Init;

    enc_conv1_ = Conv1d<S>(layout_, "enc1.conv", C, kEncW1, K, 2, P);
    enc_na1_ = nn::NormAct<S>(layout_, "enc1", kEncW1, kGroups);
    enc_conv2_ = Conv1d<S>(layout_, "enc2.conv", kEncW1, kEncW2, K, 2, P);
    enc_na2_ = nn::NormAct<S>(layout_, "enc2", kEncW2, kGroups);
    enc_conv3_ = Conv1d<S>(layout_, "enc3.conv", kEncW2, kEncW3, K, 2, P);
    enc_na3_ = nn::NormAct<S>(layout_, "enc3", kEncW3, kGroups);
    se_ = nn::ChannelSe<S>(layout_, "se", kEncW3, kEncW3 / 4);
    kan_ = nn::KanLayer<S>(layout_, "kan", kEncW3, arch.n_classes);

    dec_conv1_ = Conv1d<S>(layout_, "dec1.conv", kEncW3, kEncW2, K, 1, P);
    dec_na1_ = nn::NormAct<S>(layout_, "dec1", kEncW2, kGroups);
    dec_conv2_ = Conv1d<S>(layout_, "dec2.conv", kEncW2, kEncW1, K, 1, P);
    dec_na2_ = nn::NormAct<S>(layout_, "dec2", kEncW1, kGroups);
    dec_conv3_ = Conv1d<S>(layout_, "dec3.conv", kEncW1, kEncW1, K, 1, P);
    dec_na3_ = nn::NormAct<S>(layout_, "dec3", kEncW1, kGroups);
    final_conv_ = Conv1d<S>(layout_, "recon.conv", kEncW1 + 2 * C, C, K, 1, P, Init::Zeros);

    uin_ = Conv1d<S>(layout_, "unet.in", C, kUnetW1, K, 1, P);
    rb1_ = nn::ResBlock<S>(layout_, "unet.rb1", kUnetW1, arch.temb_dim, K, kGroups);
    inj3_ = Conv1d<S>(layout_, "unet.inj3", kEncW1, kUnetW1, 1, 1, 0);
    down1_ = Conv1d<S>(layout_, "unet.down1", kUnetW1, kUnetW2, K, 2, P);
    rb2_ = nn::ResBlock<S>(layout_, "unet.rb2", kUnetW2, arch.temb_dim, K, kGroups);
    inj2_ = Conv1d<S>(layout_, "unet.inj2", kEncW1, kUnetW2, 1, 1, 0);
    down2_ = Conv1d<S>(layout_, "unet.down2", kUnetW2, kUnetW3, K, 2, P);
    rb3_ = nn::ResBlock<S>(layout_, "unet.rb3", kUnetW3, arch.temb_dim, K, kGroups);
    inj1_ = Conv1d<S>(layout_, "unet.inj1", kEncW2, kUnetW3, 1, 1, 0);
    up2a_ = Conv1d<S>(layout_, "unet.up2a", kUnetW3, kUnetW2, K, 1, P);
    up2a_na_ = nn::NormAct<S>(layout_, "unet.up2a", kUnetW2, kGroups);
    up2b_ = Conv1d<S>(layout_, "unet.up2b", 2 * kUnetW2, kUnetW2, K, 1, P);
    up2b_na_ = nn::NormAct<S>(layout_, "unet.up2b", kUnetW2, kGroups);
    up1a_ = Conv1d<S>(layout_, "unet.up1a", kUnetW2, kUnetW1, K, 1, P);
    up1a_na_ = nn::NormAct<S>(layout_, "unet.up1a", kUnetW1, kGroups);
    up1b_ = Conv1d<S>(layout_, "unet.up1b", 2 * kUnetW1, kUnetW1, K, 1, P);
    up1b_na_ = nn::NormAct<S>(layout_, "unet.up1b", kUnetW1, kGroups);
    uout_ = Conv1d<S>(layout_, "unet.out", kUnetW1, C, K, 1, P, Init::Zeros);
  }

  const ModelArch& arch() const { return arch_; }
  const nn::ParamLayout& layout() const { return layout_; }
  Index n_params() const { return layout_.total(); }

  Vec<S> init_params(std::uint64_t seed) const {
    Vec<S> theta;
    layout_.init_params(theta, seed);
    return theta;
  }

  struct Output {
    Mat<S> ddpm_out;  // (C, B*L)
    Mat<S> recon;     // (C, B*L)
    Mat<S> logits;    // (n_classes, B)
  };

  Output forward(const Mat<S>& x0, const Mat<S>& xt, const std::vector<int>& tsteps, Index batch,
                 const Vec<S>& theta, nn::Trace<S>* tr) const {
    check_input(x0, batch);
    check_input(xt, batch);
    if (static_cast<Index>(tsteps.size()) != batch)
      throw validation_error("one diffusion step per sample is required");

    // encoder + classification head, on the clean window
    const Mat<S> e1 = enc_na1_.forward(enc_conv1_.forward(x0, batch, theta, tr), batch, theta, tr);
    const Mat<S> e2 = enc_na2_.forward(enc_conv2_.forward(e1, batch, theta, tr), batch, theta, tr);
    const Mat<S> e3 = enc_na3_.forward(enc_conv3_.forward(e2, batch, theta, tr), batch, theta, tr);
    const Mat<S> se_out = se_.forward(e3, batch, theta, tr);
    const Mat<S> latent = nn::global_avg_pool(se_out, batch);
    Mat<S> logits = kan_.forward(latent, theta, tr);

    // upsampling decoder
    const Mat<S> d1 = nn::upsample2(
        dec_na1_.forward(dec_conv1_.forward(se_out, batch, theta, tr), batch, theta, tr), batch);
    const Mat<S> d2 = nn::upsample2(
        dec_na2_.forward(dec_conv2_.forward(d1, batch, theta, tr), batch, theta, tr), batch);
    const Mat<S> d3 = nn::upsample2(
        dec_na3_.forward(dec_conv3_.forward(d2, batch, theta, tr), batch, theta, tr), batch);

    // denoising U-Net over x_t, conditioned on the decoder maps
    const Mat<S> temb = nn::time_embedding<S>(tsteps, arch_.temb_dim);
    Mat<S> h = uin_.forward(xt, batch, theta, tr);
    h = rb1_.forward(h, temb, batch, theta, tr);
    const Mat<S> skip1 = h + inj3_.forward(d3, batch, theta, tr);
    h = down1_.forward(skip1, batch, theta, tr);
    h = rb2_.forward(h, temb, batch, theta, tr);
    const Mat<S> skip2 = h + inj2_.forward(d2, batch, theta, tr);
    h = down2_.forward(skip2, batch, theta, tr);
    h = rb3_.forward(h, temb, batch, theta, tr);
    h = h + inj1_.forward(d1, batch, theta, tr);
    h = up2a_na_.forward(up2a_.forward(nn::upsample2(h, batch), batch, theta, tr), batch, theta,
                         tr);
    h = up2b_na_.forward(up2b_.forward(vcat(h, skip2), batch, theta, tr), batch, theta, tr);
    h = up1a_na_.forward(up1a_.forward(nn::upsample2(h, batch), batch, theta, tr), batch, theta,
                         tr);
    h = up1b_na_.forward(up1b_.forward(vcat(h, skip1), batch, theta, tr), batch, theta, tr);
    Mat<S> ddpm_out = uout_.forward(h, batch, theta, tr);

    // reconstruction head
    Mat<S> recon =
        final_conv_.forward(vcat(vcat(d3, x0), ddpm_out), batch, theta, tr);

    return Output{std::move(ddpm_out), std::move(recon), std::move(logits)};
  }

  // Weighted loss only; softmax_out (optional) receives the class
  // probabilities for reuse by the backward pass.
  LossParts compute_loss(const Output& out, const Mat<S>& x0, const std::vector<int>& labels,
                         Index batch, const LossWeights& w, Mat<S>* softmax_out = nullptr) const {
    const Index total = out.ddpm_out.size();
    if (static_cast<Index>(labels.size()) != batch)
      throw validation_error("one label per sample is required");

    LossParts parts;
    parts.ddpm = static_cast<double>((out.ddpm_out - x0).squaredNorm()) / total;
    parts.ae = static_cast<double>((out.recon - x0).squaredNorm()) / total;

    // stable softmax cross-entropy, natural log
    Mat<S> soft = out.logits;
    double ce = 0.0;
    for (Index b = 0; b < batch; ++b) {
      const S mx = soft.col(b).maxCoeff();
      soft.col(b) = (soft.col(b).array() - mx).exp();
      const S sum = soft.col(b).sum();
      soft.col(b) /= sum;
      const int lbl = labels[static_cast<size_t>(b)];
      if (lbl < 0 || lbl >= arch_.n_classes)
        throw validation_error("label " + std::to_string(lbl) + " outside class range");
      ce -= std::log(static_cast<double>(soft(lbl, b)));
    }
    parts.cls = ce / batch;
    parts.total = w.ddpm * parts.ddpm + w.ae * parts.ae + w.cls * parts.cls;
    if (softmax_out) *softmax_out = std::move(soft);
    return parts;
  }

  // Computes the weighted loss, seeds the three heads, and routes gradients
  // back through every path, accumulating into `grad` (not zeroed here).
  LossParts loss_and_backward(const Output& out, const Mat<S>& x0, const std::vector<int>& labels,
                              Index batch, const LossWeights& w, const Vec<S>& theta,
                              const nn::Trace<S>& tr, Vec<S>& grad) const {
    const Index C = arch_.in_channels;
    const Index total = out.ddpm_out.size();
    Mat<S> soft;
    const LossParts parts = compute_loss(out, x0, labels, batch, w, &soft);

    // head seeds
    const Mat<S> g_ddpm_loss =
        (out.ddpm_out - x0) * static_cast<S>(2.0 * w.ddpm / static_cast<double>(total));
    const Mat<S> g_recon =
        (out.recon - x0) * static_cast<S>(2.0 * w.ae / static_cast<double>(total));
    Mat<S> g_logits = soft;
    for (Index b = 0; b < batch; ++b) g_logits(labels[static_cast<size_t>(b)], b) -= S(1);
    g_logits *= static_cast<S>(w.cls / static_cast<double>(batch));

    // reconstruction head: split the concat gradient
    const Mat<S> dpen = final_conv_.backward(g_recon, batch, theta, tr, grad);
    const Mat<S> dd3_pen = dpen.topRows(kEncW1);
    const Mat<S> dunet_out = g_ddpm_loss + dpen.bottomRows(C);

    // U-Net
    Mat<S> dh = uout_.backward(dunet_out, batch, theta, tr, grad);
    Mat<S> du13 = up1b_.backward(up1b_na_.backward(dh, batch, theta, tr, grad), batch, theta, tr,
                                 grad);
    Mat<S> dskip1 = du13.bottomRows(kUnetW1);
    dh = up1a_.backward(up1a_na_.backward(du13.topRows(kUnetW1), batch, theta, tr, grad), batch,
                        theta, tr, grad);
    dh = nn::upsample2_backward(dh, batch);
    Mat<S> du9 = up2b_.backward(up2b_na_.backward(dh, batch, theta, tr, grad), batch, theta, tr,
                                grad);
    Mat<S> dskip2 = du9.bottomRows(kUnetW2);
    dh = up2a_.backward(up2a_na_.backward(du9.topRows(kUnetW2), batch, theta, tr, grad), batch,
                        theta, tr, grad);
    dh = nn::upsample2_backward(dh, batch);
    Mat<S> dd1 = inj1_.backward(dh, batch, theta, tr, grad);
    dh = rb3_.backward(dh, batch, theta, tr, grad);
    dskip2 += down2_.backward(dh, batch, theta, tr, grad);
    Mat<S> dd2 = inj2_.backward(dskip2, batch, theta, tr, grad);
    dh = rb2_.backward(dskip2, batch, theta, tr, grad);
    dskip1 += down1_.backward(dh, batch, theta, tr, grad);
    Mat<S> dd3 = inj3_.backward(dskip1, batch, theta, tr, grad) + dd3_pen;
    dh = rb1_.backward(dskip1, batch, theta, tr, grad);
    uin_.backward(dh, batch, theta, tr, grad);  // input gradient not needed

    // decoder chain, coarsest last
    Mat<S> dse = dec_backward(dec_conv1_, dec_na1_,
                              dec_backward(dec_conv2_, dec_na2_,
                                           dec_backward(dec_conv3_, dec_na3_, dd3, batch, theta,
                                                        tr, grad) +
                                               dd2,
                                           batch, theta, tr, grad) +
                                  dd1,
                              batch, theta, tr, grad);

    // classification head
    const Mat<S> dlatent = kan_.backward(g_logits, theta, tr, grad);
    dse += nn::global_avg_pool_backward(dlatent, batch, arch_.window / 8);

    // encoder
    Mat<S> de = se_.backward(dse, batch, theta, tr, grad);
    de = enc_conv3_.backward(enc_na3_.backward(de, batch, theta, tr, grad), batch, theta, tr,
                             grad);
    de = enc_conv2_.backward(enc_na2_.backward(de, batch, theta, tr, grad), batch, theta, tr,
                             grad);
    enc_conv1_.backward(enc_na1_.backward(de, batch, theta, tr, grad), batch, theta, tr, grad);
    return parts;
  }

 private:
  void check_input(const Mat<S>& x, Index batch) const {
    if (batch < 1) throw validation_error("batch must be positive");
    if (x.rows() != arch_.in_channels || x.cols() != batch * arch_.window)
      throw validation_error("model input has shape " + std::to_string(x.rows()) + "x" +
                             std::to_string(x.cols()) + ", expected " +
                             std::to_string(arch_.in_channels) + "x" +
                             std::to_string(batch * arch_.window));
  }

  static Mat<S> vcat(const Mat<S>& a, const Mat<S>& b) {
    Mat<S> m(a.rows() + b.rows(), a.cols());
    m.topRows(a.rows()) = a;
    m.bottomRows(b.rows()) = b;
    return m;
  }

  // Backward through one decoder stage (conv, norm-act, upsample).
  Mat<S> dec_backward(const nn::Conv1d<S>& conv, const nn::NormAct<S>& na, const Mat<S>& gy,
                      Index batch, const Vec<S>& theta, const nn::Trace<S>& tr,
                      Vec<S>& grad) const {
    Mat<S> g = nn::upsample2_backward(gy, batch);
    g = na.backward(g, batch, theta, tr, grad);
    return conv.backward(g, batch, theta, tr, grad);
  }

  ModelArch arch_;
  nn::ParamLayout layout_;

  nn::Conv1d<S> enc_conv1_, enc_conv2_, enc_conv3_;
  nn::NormAct<S> enc_na1_, enc_na2_, enc_na3_;
  nn::ChannelSe<S> se_;
  nn::KanLayer<S> kan_;
  nn::Conv1d<S> dec_conv1_, dec_conv2_, dec_conv3_;
  nn::NormAct<S> dec_na1_, dec_na2_, dec_na3_;
  nn::Conv1d<S> final_conv_;
  nn::Conv1d<S> uin_, inj1_, inj2_, inj3_, down1_, down2_;
  nn::ResBlock<S> rb1_, rb2_, rb3_;
  nn::Conv1d<S> up2a_, up2b_, up1a_, up1b_, uout_;
  nn::NormAct<S> up2a_na_, up2b_na_, up1a_na_, up1b_na_;
};

}  // namespace viseme::decode
