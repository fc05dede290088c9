#include "mmrec/model.hpp"

#include "mmrec/error.hpp"

namespace mmrec {

void ModelConfig::validate() const {
    if (d_raw < 1) throw Error(ErrorKind::config, "model: d_raw must be positive");
    if (d < 1) throw Error(ErrorKind::config, "model: d must be positive");
    if (n_layers < 1) throw Error(ErrorKind::config, "model: n_layers must be positive");
    if (n_heads < 1 || d % n_heads != 0)
        throw Error(ErrorKind::config, "model: d must be divisible by n_heads");
    if (max_frames < 1) throw Error(ErrorKind::config, "model: max_frames must be >= 1");
    if (n_max < 1) throw Error(ErrorKind::config, "model: n_max must be >= 1");
    if (embed_dropout < 0.0 || embed_dropout >= 1.0 || hidden_dropout < 0.0 || hidden_dropout >= 1.0)
        throw Error(ErrorKind::config, "model: dropout rates must be in [0,1)");
    if (tau <= 0.0) throw Error(ErrorKind::config, "model: tau must be positive");
    if (ln_eps <= 0.0) throw Error(ErrorKind::config, "model: ln_eps must be positive");
}

Model::Model(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const int64_t dr = cfg_.d_raw, d = cfg_.d, h = 4 * cfg_.d;

    visual_in_w = Parameter("visual_proj_in.weight", Tensor::zeros({dr, d}));
    visual_in_b = Parameter("visual_proj_in.bias", Tensor::zeros({d}));
    text_in_w = Parameter("text_proj_in.weight", Tensor::zeros({dr, d}));
    text_in_b = Parameter("text_proj_in.bias", Tensor::zeros({d}));
    modality_emb = Parameter("modality_embeddings", Tensor::zeros({2, d}));
    mask_emb = Parameter("mask_embedding", Tensor::zeros({d}));
    pos_emb = Parameter("positional_embeddings", Tensor::zeros({cfg_.n_max, d}));

    layers.resize(static_cast<size_t>(cfg_.n_layers));
    for (int64_t i = 0; i < cfg_.n_layers; ++i) {
        const std::string p = "layers." + std::to_string(i) + ".";
        LayerParams& L = layers[static_cast<size_t>(i)];
        L.wq = Parameter(p + "attn.wq", Tensor::zeros({d, d}));
        L.bq = Parameter(p + "attn.bq", Tensor::zeros({d}));
        L.wk = Parameter(p + "attn.wk", Tensor::zeros({d, d}));
        L.wv = Parameter(p + "attn.wv", Tensor::zeros({d, d}));
        L.bv = Parameter(p + "attn.bv", Tensor::zeros({d}));
        L.wo = Parameter(p + "attn.wo", Tensor::zeros({d, d}));
        L.bo = Parameter(p + "attn.bo", Tensor::zeros({d}));
        L.ln1_gain = Parameter(p + "ln1.gain", Tensor::full({d}, 1.0));
        L.ln1_bias = Parameter(p + "ln1.bias", Tensor::zeros({d}));
        L.w1 = Parameter(p + "ffn.w1", Tensor::zeros({d, h}));
        L.b1 = Parameter(p + "ffn.b1", Tensor::zeros({h}));
        L.w2 = Parameter(p + "ffn.w2", Tensor::zeros({h, d}));
        L.b2 = Parameter(p + "ffn.b2", Tensor::zeros({d}));
        L.ln2_gain = Parameter(p + "ln2.gain", Tensor::full({d}, 1.0));
        L.ln2_bias = Parameter(p + "ln2.bias", Tensor::zeros({d}));
    }

    visual_out_w = Parameter("visual_proj_out.weight", Tensor::zeros({d, d}));
    visual_out_b = Parameter("visual_proj_out.bias", Tensor::zeros({d}));
    text_out_w = Parameter("text_proj_out.weight", Tensor::zeros({d, d}));
    text_out_b = Parameter("text_proj_out.bias", Tensor::zeros({d}));
}

std::vector<Parameter*> Model::parameters() {
    std::vector<Parameter*> out = {&visual_in_w, &visual_in_b, &text_in_w, &text_in_b,
                                   &modality_emb, &mask_emb, &pos_emb};
    for (LayerParams& L : layers) {
        out.push_back(&L.wq);
        out.push_back(&L.bq);
        out.push_back(&L.wk);
        out.push_back(&L.wv);
        out.push_back(&L.bv);
        out.push_back(&L.wo);
        out.push_back(&L.bo);
        out.push_back(&L.ln1_gain);
        out.push_back(&L.ln1_bias);
        out.push_back(&L.w1);
        out.push_back(&L.b1);
        out.push_back(&L.w2);
        out.push_back(&L.b2);
        out.push_back(&L.ln2_gain);
        out.push_back(&L.ln2_bias);
    }
    out.push_back(&visual_out_w);
    out.push_back(&visual_out_b);
    out.push_back(&text_out_w);
    out.push_back(&text_out_b);
    return out;
}

Parameter& Model::find(const std::string& name) {
    for (Parameter* p : parameters())
        if (p->name == name) return *p;
    throw Error(ErrorKind::contract, "model: no parameter named " + name);
}

void Model::zero_grads() {
    for (Parameter* p : parameters()) p->zero_grad();
}

void Model::init_params(uint64_t seed) {
    Rng rng = Rng(seed).stream(streams::init);
    auto fill = [&rng](Parameter& p) {
        for (double& v : p.value.data) v = rng.truncated_normal(0.02);
    };
    // Weight matrices and embedding tables draw in canonical parameter order;
    // biases stay zero and layer-norm gains stay one.
    fill(visual_in_w);
    fill(text_in_w);
    fill(modality_emb);
    fill(mask_emb);
    fill(pos_emb);
    for (LayerParams& L : layers) {
        fill(L.wq);
        fill(L.wk);
        fill(L.wv);
        fill(L.wo);
        fill(L.w1);
        fill(L.w2);
    }
    fill(visual_out_w);
    fill(text_out_w);
}

}  // namespace mmrec
