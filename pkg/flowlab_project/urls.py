"""
URL configuration for the flowlab project.

The lab is driven from management commands; the admin browses recorded runs.
"""

from django.contrib import admin
from django.urls import path

urlpatterns = [
    path("admin/", admin.site.urls),
]
