#include "warptrack/model.hpp"

namespace warptrack {

template <typename S>
EncodeActs<S> encode_lowres(const Encoder<S>& enc, const Tensor<S>& frames) {
  check_dim(frames.rank() == 4 && frames.extent(1) == 3, "encode_lowres: expected [t,3,h,w] frames");
  check_dim(frames.extent(2) % 8 == 0 && frames.extent(3) % 8 == 0,
            "encode_lowres: frame extents must be multiples of 8 (pad first)");
  EncodeActs<S> acts;
  acts.a1 = relu(conv2d(frames, enc.c1.w, enc.c1.b, 2, 1));
  acts.a2 = relu(conv2d(acts.a1, enc.c2.w, enc.c2.b, 2, 1));
  acts.a3 = relu(conv2d(acts.a2, enc.c3.w, enc.c3.b, 2, 1));
  return acts;
}

template <typename S>
FeatureField<S> upsample(const Encoder<S>& enc, const EncodeActs<S>& acts, const Tensor<S>& frames) {
  // backbone features lifted back to stride 2 with skip fusions
  auto b1 = relu(conv_transpose2d(acts.a3, enc.up1.w, enc.up1.b, 2, 1));
  auto b1f = relu(conv2d(concat_planes<S>({b1, acts.a2}), enc.skip1.w, enc.skip1.b, 1, 1));
  auto b2 = relu(conv_transpose2d(b1f, enc.up2.w, enc.up2.b, 2, 1));
  auto b2f = relu(conv2d(concat_planes<S>({b2, acts.a1}), enc.skip2.w, enc.skip2.b, 1, 0));

  // small u-net on the raw frames, output at stride 2
  auto r1 = relu(conv2d(frames, enc.u1.w, enc.u1.b, 1, 1));
  auto r2 = relu(conv2d(r1, enc.u2.w, enc.u2.b, 2, 1));
  auto r3 = relu(conv2d(r2, enc.u3.w, enc.u3.b, 2, 1));
  auto ru = relu(conv_transpose2d(r3, enc.uup.w, enc.uup.b, 2, 1));
  auto rf = relu(conv2d(concat_planes<S>({ru, r2}), enc.ufuse.w, enc.ufuse.b, 1, 0));

  FeatureField<S> field;
  field.features = conv2d(concat_planes<S>({b2f, rf}), enc.proj.w, enc.proj.b, 1, 0);
  field.stride = 2;
  return field;
}

template <typename S>
FeatureField<S> encode(const Model<S>& model, const Tensor<S>& frames) {
  EncodeActs<S> acts = encode_lowres(model.encoder, frames);
  FeatureField<S> field = upsample(model.encoder, acts, frames);
  if (model.config.stride > 2) {
    field.features = stride_slice2d(field.features, model.config.stride / 2);
    field.stride = model.config.stride;
  }
  return field;
}

template EncodeActs<float> encode_lowres<float>(const Encoder<float>&, const Tensor<float>&);
template EncodeActs<double> encode_lowres<double>(const Encoder<double>&, const Tensor<double>&);
template FeatureField<float> upsample<float>(const Encoder<float>&, const EncodeActs<float>&, const Tensor<float>&);
template FeatureField<double> upsample<double>(const Encoder<double>&, const EncodeActs<double>&,
                                               const Tensor<double>&);
template FeatureField<float> encode<float>(const Model<float>&, const Tensor<float>&);
template FeatureField<double> encode<double>(const Model<double>&, const Tensor<double>&);

}  // namespace warptrack
