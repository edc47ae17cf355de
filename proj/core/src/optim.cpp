#include "gridshield/optim.hpp"

#include <cmath>

namespace gridshield {

namespace {

void ensure_state(AdamState& state, const std::vector<std::size_t>& sizes) {
    if (state.m.size() == sizes.size()) return;
    state.m.clear();
    state.v.clear();
    for (std::size_t s : sizes) {
        state.m.emplace_back(s, 0.0f);
        state.v.emplace_back(s, 0.0f);
    }
}

void update(float* p, const float* g, float* m, float* v, std::size_t len, const AdamState& st,
            float lr, float c1, float c2) {
    for (std::size_t i = 0; i < len; ++i) {
        m[i] = st.beta1 * m[i] + (1.0f - st.beta1) * g[i];
        v[i] = st.beta2 * v[i] + (1.0f - st.beta2) * g[i] * g[i];
        const float mh = m[i] / c1;
        const float vh = v[i] / c2;
        p[i] -= lr * mh / (std::sqrt(vh) + st.eps);
    }
}

}  // namespace

void adam_step(std::vector<std::shared_ptr<Tensor>>& params, AdamState& state, float lr) {
    std::vector<std::size_t> sizes;
    sizes.reserve(params.size());
    for (auto& p : params) sizes.push_back(p->numel());
    ensure_state(state, sizes);

    for (auto& p : params) {
        const std::vector<float>& g = p->ensure_grad();
        for (float gv : g) {
            if (!std::isfinite(gv)) {
                ++state.skipped_steps;
                return;
            }
        }
    }

    ++state.step_count;
    const float c1 = 1.0f - std::pow(state.beta1, static_cast<float>(state.step_count));
    const float c2 = 1.0f - std::pow(state.beta2, static_cast<float>(state.step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& t = *params[i];
        update(t.data.data(), t.grad->data(), state.m[i].data(), state.v[i].data(), t.numel(),
               state, lr, c1, c2);
    }
}

void adam_step_flat(std::vector<float>& param, const std::vector<float>& grad, AdamState& state,
                    float lr) {
    ensure_state(state, {param.size()});
    for (float gv : grad) {
        if (!std::isfinite(gv)) {
            ++state.skipped_steps;
            return;
        }
    }
    ++state.step_count;
    const float c1 = 1.0f - std::pow(state.beta1, static_cast<float>(state.step_count));
    const float c2 = 1.0f - std::pow(state.beta2, static_cast<float>(state.step_count));
    update(param.data(), grad.data(), state.m[0].data(), state.v[0].data(), param.size(), state,
           lr, c1, c2);
}

}  // namespace gridshield
