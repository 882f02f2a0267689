from django.urls import path
from .views import HealthCheckView, SimulateView, ExperimentRunDetailView


urlpatterns = [
    path("health/", HealthCheckView.as_view(), name="health"),
    path("simulate/", SimulateView.as_view(), name="simulate"),
    path("runs/<int:pk>/", ExperimentRunDetailView.as_view(), name="run-detail"),
]
