#include <stdio.h>
#include <string.h>
#include "autodim.h"

#define CHECK(cond)                                                        \
  do {                                                                     \
    if (!(cond)) {                                                         \
      const char *m = autodim_last_error_message();                        \
      fprintf(stderr, "line %d: %s (%s)\n", __LINE__, #cond, m ? m : ""); \
      return 1;                                                            \
    }                                                                      \
  } while (0)

int main(int argc, char **argv) {
  if (argc != 2) return 2;
  AutodimDataset *ds = NULL;
  CHECK(autodim_dataset_synthetic(2000, 7, 0, &ds) == AUTODIM_STATUS_OK);
  CHECK(autodim_dataset_num_fields(ds) == 3);

  AutodimConfig *cfg = autodim_config_new();
  const char *settings[] = {"batch_size=128", "candidate_dims=[2,8]", "hidden=[8]",
                            "search_epochs=2", "retrain_epochs=2"};
  for (size_t i = 0; i < sizeof settings / sizeof *settings; i++)
    CHECK(autodim_config_set(cfg, settings[i]) == AUTODIM_STATUS_OK);
  CHECK(autodim_config_set(cfg, "bogus=1") == AUTODIM_STATUS_CONFIG);
  CHECK(strlen(autodim_last_error_message()) > 0);

  AutodimArchitecture *arch = NULL;
  CHECK(autodim_search(ds, cfg, &arch) == AUTODIM_STATUS_OK);
  uint64_t dims[3];
  CHECK(autodim_architecture_dims(arch, dims, 3) == AUTODIM_STATUS_OK);
  CHECK(autodim_architecture_save(arch, argv[1]) == AUTODIM_STATUS_OK);

  AutodimEvalReport report;
  CHECK(autodim_retrain(ds, arch, cfg, &report) == AUTODIM_STATUS_OK);
  CHECK(report.params == autodim_architecture_param_count(arch));
  printf("dims %llu %llu %llu auc %.4f\n", (unsigned long long)dims[0],
         (unsigned long long)dims[1], (unsigned long long)dims[2], report.auc);

  autodim_architecture_free(arch);
  autodim_config_free(cfg);
  autodim_dataset_free(ds);
  return 0;
}
