from .autograd import Tensor, backward, GradientError
from .nn import (Adam, GnnModel, MLP, TrainResult, TrainingError, classifier_loss, link_predictor_loss,
                 load_checkpoint, predict_labels, save_checkpoint, train)
from .pretrain import (EmbeddingPair, EncoderConfig, lp_defaults, nc_defaults, pretrain_encoders,
                       sample_negative_edges, train_classifier, train_link_predictor)
