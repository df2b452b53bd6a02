#include "v2f.h"

int main(void) {
    V2fDataset *data = NULL;
    if (v2f_dataset_generate(0, 20, 4, 2, &data) != V2F_STATUS_OK) {
        return 1;
    }
    size_t n = v2f_dataset_len(data);
    v2f_dataset_free(data);
    V2fVoxelMetrics m;
    double pred[3] = {1.0, 2.0, 3.0};
    if (v2f_voxel_metrics(pred, pred, 1, 3, &m) != V2F_STATUS_OK) {
        return 2;
    }
    return n > 0 && m.mse == 0.0 ? 0 : 3;
}
